//! Exact single-realization scattering.
//!
//! With `D(E) = E - H + (i/2) Gamma` the S-matrix is
//! `S = 1 - 2 pi i W D^{-1} W^T`, where `W` stacks the channel couplings of both
//! spaces. Three evaluation routes are provided:
//!
//! * [`s_matrix_direct`] solves against the full `(2N + k)`-dimensional `D(E)`;
//! * [`s_ab_resummed`] eliminates the GOE spaces first and propagates through the
//!   transition space with the exact (realization-dependent) `G_tr`;
//! * [`KMatrixScatterer`] diagonalizes the real Hamiltonian once and evaluates
//!   `S = (1 - iK)(1 + iK)^{-1}`, `K = pi W (E - H)^{-1} W^T`, which is the fast
//!   path for energy sweeps over many realizations.

use std::f64::consts::PI;

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, C64, I};
use crate::model::{assemble_full_hamiltonian, width_matrix, ChannelMatrix, RealizationModel};

/// Solve residual above which a propagator is reported singular.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-8;
/// Tolerance of the unitarity and symmetry gates.
pub const UNITARITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    One,
    Two,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::One => 1,
            Side::Two => 2,
        }
    }
}

/// Full `(Lambda1 + Lambda2)`-dimensional S-matrix. Channels of space 1 come
/// first.
#[derive(Debug, Clone)]
pub struct ScatteringMatrix {
    pub s: Mat<C64>,
    pub energy: f64,
    pub channels_1: usize,
    pub channels_2: usize,
}

impl ScatteringMatrix {
    /// Maps a global channel index to its side and offset within that side.
    pub fn block_index(&self, channel: usize) -> Option<(Side, usize)> {
        if channel < self.channels_1 {
            Some((Side::One, channel))
        } else if channel < self.channels_1 + self.channels_2 {
            Some((Side::Two, channel - self.channels_1))
        } else {
            None
        }
    }

    /// `S_ab` transmission block, `Lambda1 x Lambda2`.
    pub fn s_ab(&self) -> MatRef<'_, C64> {
        self.s
            .as_ref()
            .submatrix(0, self.channels_1, self.channels_1, self.channels_2)
    }

    pub fn s_ba(&self) -> MatRef<'_, C64> {
        self.s
            .as_ref()
            .submatrix(self.channels_1, 0, self.channels_2, self.channels_1)
    }

    pub fn s_aa(&self) -> MatRef<'_, C64> {
        self.s.as_ref().submatrix(0, 0, self.channels_1, self.channels_1)
    }

    pub fn s_bb(&self) -> MatRef<'_, C64> {
        self.s
            .as_ref()
            .submatrix(self.channels_1, self.channels_1, self.channels_2, self.channels_2)
    }

    pub fn unitarity_defect(&self) -> f64 {
        linalg::unitarity_defect(self.s.as_ref())
    }

    pub fn symmetry_defect(&self) -> f64 {
        linalg::asymmetry_c(self.s.as_ref())
    }

    /// True when both the unitarity and the symmetry defect are below [`UNITARITY_TOL`].
    pub fn passes_gates(&self) -> bool {
        self.unitarity_defect() < UNITARITY_TOL && self.symmetry_defect() < UNITARITY_TOL
    }
}

/// `D(E) = E - H + (i/2) Gamma` for the full model.
pub fn propagator_inverse(model: &RealizationModel, energy: f64) -> Result<Mat<C64>> {
    let h = assemble_full_hamiltonian(model)?;
    let gamma = model.total_width().gamma;
    Ok(shifted(h.as_ref(), gamma.as_ref(), energy))
}

/// `E - H + (i/2) Gamma`.
fn shifted(h: MatRef<'_, f64>, gamma: MatRef<'_, f64>, energy: f64) -> Mat<C64> {
    Mat::from_fn(h.nrows(), h.ncols(), |i, j| {
        let diag = if i == j { energy } else { 0.0 };
        C64::new(diag - h[(i, j)], 0.5 * gamma[(i, j)])
    })
}

fn checked_solve(a: MatRef<'_, C64>, b: MatRef<'_, C64>, energy: f64) -> Result<Mat<C64>> {
    let (x, residual) = linalg::solve_checked(a, b);
    if residual > SOLVE_RESIDUAL_TOL {
        return Err(Error::SingularPropagator { energy, residual });
    }
    Ok(x)
}

/// `delta - 2 pi i W_left X` with `X = D^{-1} W_right^T` already solved.
fn s_from_solution(w_left: MatRef<'_, f64>, x: MatRef<'_, C64>, with_identity: bool) -> Mat<C64> {
    let wx = linalg::to_complex(w_left) * x;
    Mat::from_fn(wx.nrows(), wx.ncols(), |i, j| {
        let delta = if with_identity && i == j { 1.0 } else { 0.0 };
        C64::new(delta, 0.0) - 2.0 * PI * I * wx[(i, j)]
    })
}

/// All four blocks of `S(E)` from linear solves against the full `D(E)`.
pub fn s_matrix_direct(model: &RealizationModel, energy: f64) -> Result<ScatteringMatrix> {
    let d = propagator_inverse(model, energy)?;
    let w = model.full_channel_coupling();
    let rhs = linalg::to_complex(w.transpose());
    let x = checked_solve(d.as_ref(), rhs.as_ref(), energy)?;
    Ok(ScatteringMatrix {
        s: s_from_solution(w.as_ref(), x.as_ref(), true),
        energy,
        channels_1: model.channels_1(),
        channels_2: model.channels_2(),
    })
}

/// GOE-space solves `(E - H_j + i Gamma_j / 2)^{-1} [V_j | W_j^T]`.
struct SpaceSolve {
    /// `G_j V_j`, `N x k`
    gv: Mat<C64>,
    /// `G_j W_j^T`, `N x Lambda_j`
    gw: Mat<C64>,
}

fn space_solve(h: MatRef<'_, f64>, w: &ChannelMatrix, v: MatRef<'_, f64>, energy: f64) -> Result<SpaceSolve> {
    let gamma = width_matrix(w).gamma;
    let d = shifted(h, gamma.as_ref(), energy);
    let k = v.ncols();
    let l = w.n_channels();
    let n = h.nrows();
    let rhs = Mat::from_fn(n, k + l, |mu, c| {
        if c < k {
            C64::new(v[(mu, c)], 0.0)
        } else {
            C64::new(w.rows[(c - k, mu)], 0.0)
        }
    });
    let x = checked_solve(d.as_ref(), rhs.as_ref(), energy)?;
    Ok(SpaceSolve {
        gv: x.as_ref().submatrix(0, 0, n, k).to_owned(),
        gw: x.as_ref().submatrix(0, k, n, l).to_owned(),
    })
}

/// `S_ab = -2 pi i W1 G1 V1 G_tr V2^T G2 W2^T` with the exact
/// `G_tr = (E - Htr - V1^T G1 V1 - V2^T G2 V2)^{-1}`.
pub fn s_ab_resummed(model: &RealizationModel, energy: f64) -> Result<Mat<C64>> {
    model.check_dimensions()?;
    if linalg::max_abs(model.v1.v_matrix.as_ref()) == 0.0 || linalg::max_abs(model.v2.v_matrix.as_ref()) == 0.0 {
        // no path between the spaces; G_tr itself may be singular here
        return Ok(Mat::zeros(model.channels_1(), model.channels_2()));
    }
    let s1 = space_solve(model.h1.matrix.as_ref(), &model.w1, model.v1.v_matrix.as_ref(), energy)?;
    let s2 = space_solve(model.h2.matrix.as_ref(), &model.w2, model.v2.v_matrix.as_ref(), energy)?;
    let gtr = exact_transition_propagator(model, &s1, &s2, energy)?;

    // G_j is complex symmetric, so W_j G_j V_j = (G_j W_j^T)^T V_j.
    let v1 = linalg::to_complex(model.v1.v_matrix.as_ref());
    let v2 = linalg::to_complex(model.v2.v_matrix.as_ref());
    let left = s1.gw.transpose() * &v1;
    let right = v2.transpose() * &s2.gw;
    let amp = &left * &gtr * &right;
    Ok(Mat::from_fn(amp.nrows(), amp.ncols(), |i, j| {
        -2.0 * PI * I * amp[(i, j)]
    }))
}

fn exact_transition_propagator(
    model: &RealizationModel,
    s1: &SpaceSolve,
    s2: &SpaceSolve,
    energy: f64,
) -> Result<Mat<C64>> {
    let k = model.k();
    let v1 = linalg::to_complex(model.v1.v_matrix.as_ref());
    let v2 = linalg::to_complex(model.v2.v_matrix.as_ref());
    let sigma = v1.transpose() * &s1.gv + v2.transpose() * &s2.gv;
    let inv = Mat::from_fn(k, k, |i, j| {
        let diag = if i == j { energy } else { 0.0 };
        C64::new(diag - model.htr[(i, j)], 0.0) - sigma[(i, j)]
    });
    checked_solve(inv.as_ref(), linalg::identity_c(k).as_ref(), energy)
}

/// Explicit `G1`, `G2` and exact `G_tr` at one energy.
#[derive(Debug, Clone)]
pub struct GreenFunctions {
    pub g1: Mat<C64>,
    pub g2: Mat<C64>,
    pub gtr_exact: Mat<C64>,
    pub energy: f64,
}

impl GreenFunctions {
    /// Largest of the three residuals `max |D_j G_j - 1|`.
    pub fn residual(&self, model: &RealizationModel) -> f64 {
        let n = model.n_dim();
        let d1 = shifted(
            model.h1.matrix.as_ref(),
            width_matrix(&model.w1).gamma.as_ref(),
            self.energy,
        );
        let d2 = shifted(
            model.h2.matrix.as_ref(),
            width_matrix(&model.w2).gamma.as_ref(),
            self.energy,
        );
        let id = linalg::identity_c(n);
        let r1 = linalg::max_abs_diff_c((&d1 * &self.g1).as_ref(), id.as_ref());
        let r2 = linalg::max_abs_diff_c((&d2 * &self.g2).as_ref(), id.as_ref());

        let k = model.k();
        let v1 = linalg::to_complex(model.v1.v_matrix.as_ref());
        let v2 = linalg::to_complex(model.v2.v_matrix.as_ref());
        let sigma = v1.transpose() * &self.g1 * &v1 + v2.transpose() * &self.g2 * &v2;
        let dtr = Mat::from_fn(k, k, |i, j| {
            let diag = if i == j { self.energy } else { 0.0 };
            C64::new(diag - model.htr[(i, j)], 0.0) - sigma[(i, j)]
        });
        let rtr = linalg::max_abs_diff_c((&dtr * &self.gtr_exact).as_ref(), linalg::identity_c(k).as_ref());
        r1.max(r2).max(rtr)
    }
}

pub fn green_functions(model: &RealizationModel, energy: f64) -> Result<GreenFunctions> {
    model.check_dimensions()?;
    let n = model.n_dim();
    let id = linalg::identity_c(n);
    let d1 = shifted(model.h1.matrix.as_ref(), width_matrix(&model.w1).gamma.as_ref(), energy);
    let d2 = shifted(model.h2.matrix.as_ref(), width_matrix(&model.w2).gamma.as_ref(), energy);
    let g1 = checked_solve(d1.as_ref(), id.as_ref(), energy)?;
    let g2 = checked_solve(d2.as_ref(), id.as_ref(), energy)?;
    let v1 = linalg::to_complex(model.v1.v_matrix.as_ref());
    let v2 = linalg::to_complex(model.v2.v_matrix.as_ref());
    let s1 = SpaceSolve {
        gv: &g1 * &v1,
        gw: Mat::zeros(n, 0),
    };
    let s2 = SpaceSolve {
        gv: &g2 * &v2,
        gw: Mat::zeros(n, 0),
    };
    let gtr_exact = exact_transition_propagator(model, &s1, &s2, energy)?;
    Ok(GreenFunctions {
        g1,
        g2,
        gtr_exact,
        energy,
    })
}

/// `S1(E)` or `S2(E)`: backscattering of one GOE space with the transition
/// space closed (`V1 = V2 = 0`).
pub fn decoupled_backscatter(model: &RealizationModel, energy: f64, side: Side) -> Result<Mat<C64>> {
    model.check_dimensions()?;
    let (h, w) = match side {
        Side::One => (&model.h1, &model.w1),
        Side::Two => (&model.h2, &model.w2),
    };
    let empty = Mat::<f64>::zeros(model.n_dim(), 0);
    let solved = space_solve(h.matrix.as_ref(), w, empty.as_ref(), energy)?;
    Ok(s_from_solution(w.rows.as_ref(), solved.gw.as_ref(), true))
}

/// Eigenbasis evaluation of `S = (1 - iK)(1 + iK)^{-1}` with
/// `K(E) = pi (W U) diag(1 / (E - e)) (W U)^T`, where `H = U diag(e) U^T`.
///
/// One symmetric eigendecomposition per Hamiltonian; each energy then costs
/// `O(Lambda^2 (dim + Lambda))`. The result is unitary and symmetric by
/// construction.
#[derive(Debug, Clone)]
pub struct KMatrixScatterer {
    levels: Vec<f64>,
    /// `W U`, `Lambda x dim`
    projected: Mat<f64>,
}

impl KMatrixScatterer {
    pub fn new(h: MatRef<'_, f64>, w: MatRef<'_, f64>) -> Result<Self> {
        if w.ncols() != h.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "channel coupling has {} columns, Hamiltonian dimension is {}",
                w.ncols(),
                h.nrows()
            )));
        }
        let (levels, u) = linalg::symmetric_eigen(h)?;
        Ok(KMatrixScatterer {
            levels,
            projected: w * &u,
        })
    }

    /// Full model: all channels against the `(2N + k)`-dimensional Hamiltonian.
    pub fn full(model: &RealizationModel) -> Result<Self> {
        let h = assemble_full_hamiltonian(model)?;
        Self::new(h.as_ref(), model.full_channel_coupling().as_ref())
    }

    /// One GOE space with the transition space closed.
    pub fn decoupled(model: &RealizationModel, side: Side) -> Result<Self> {
        let (h, w) = match side {
            Side::One => (&model.h1, &model.w1),
            Side::Two => (&model.h2, &model.w2),
        };
        Self::new(h.matrix.as_ref(), w.rows.as_ref())
    }

    pub fn n_channels(&self) -> usize {
        self.projected.nrows()
    }

    pub fn k_matrix(&self, energy: f64) -> Result<Mat<f64>> {
        let l = self.n_channels();
        let mut scaled = self.projected.clone();
        for (c, &e) in self.levels.iter().enumerate() {
            if (0..l).all(|a| scaled[(a, c)] == 0.0) {
                // a state without channel coupling does not scatter
                continue;
            }
            let f = PI / (energy - e);
            if !f.is_finite() {
                return Err(Error::SingularPropagator {
                    energy,
                    residual: f64::INFINITY,
                });
            }
            for a in 0..l {
                scaled[(a, c)] *= f;
            }
        }
        Ok(&scaled * self.projected.transpose())
    }

    pub fn s_matrix(&self, energy: f64) -> Result<Mat<C64>> {
        let k = self.k_matrix(energy)?;
        let l = k.nrows();
        let plus = Mat::from_fn(l, l, |i, j| C64::new(if i == j { 1.0 } else { 0.0 }, k[(i, j)]));
        let minus = Mat::from_fn(l, l, |i, j| C64::new(if i == j { 1.0 } else { 0.0 }, -k[(i, j)]));
        let s = plus.partial_piv_lu().solve(&minus);
        if !linalg::max_abs_c(s.as_ref()).is_finite() {
            return Err(Error::SingularPropagator {
                energy,
                residual: f64::INFINITY,
            });
        }
        Ok(s)
    }

    /// Wraps [`Self::s_matrix`] for a full-model scatterer.
    pub fn scattering_matrix(&self, energy: f64, channels_1: usize) -> Result<ScatteringMatrix> {
        let s = self.s_matrix(energy)?;
        let channels_2 = s.nrows() - channels_1;
        Ok(ScatteringMatrix {
            s,
            energy,
            channels_1,
            channels_2,
        })
    }
}

/// `T_c = 1 - |<S_cc>|^2`, one value per channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransmissionCoefficients {
    pub t_values: Vec<f64>,
    pub sum_t: f64,
}

impl TransmissionCoefficients {
    pub fn new(t_values: Vec<f64>) -> Self {
        let sum_t = t_values.iter().sum();
        TransmissionCoefficients { t_values, sum_t }
    }

    /// `T_c / sum T`.
    pub fn relative(&self, channel: usize) -> f64 {
        self.t_values[channel] / self.sum_t
    }
}

/// Clamps `1 - |<S>|^2` into `[0, 1]`; averages slightly outside the unit disk
/// come from statistical noise.
pub fn transmission_from_average(avg_diag: &[C64]) -> TransmissionCoefficients {
    TransmissionCoefficients::new(avg_diag.iter().map(|s| (1.0 - s.norm_sqr()).clamp(0.0, 1.0)).collect())
}

/// `T = 4x / (1 + x)^2` with `x = pi v^2 / lambda`; the band-center value for a
/// single channel of strength `v^2` attached to a GOE with `<G> = -i / lambda`.
pub fn transmission_analytic_oracle(v_sq: f64, lambda: f64) -> f64 {
    let x = PI * v_sq / lambda;
    4.0 * x / (1.0 + x).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CouplingBlock, GoeSample, ModelConfig, ModelTemplate, Preset};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn realization(n: usize, k: usize, l: usize, seed: u64) -> RealizationModel {
        let mut cfg = ModelConfig::preset_with(Preset::Isolated, n, k, 1.0, l, l);
        cfg.sv_1 = vec![0.3; k];
        cfg.sv_2 = (0..k).map(|m| 0.2 + 0.05 * m as f64).collect();
        cfg.seed = seed;
        ModelTemplate::new(&cfg)
            .unwrap()
            .sample(true, &mut ChaCha8Rng::seed_from_u64(seed + 1))
            .unwrap()
    }

    /// `N = 1`, no transition space, one channel of strength `v^2`, `H1 = 0`.
    fn single_level(v_sq: f64) -> RealizationModel {
        let w = ChannelMatrix {
            rows: Mat::from_fn(1, 1, |_, _| v_sq.sqrt()),
            strengths: vec![v_sq],
        };
        let empty_block = CouplingBlock::from_frames(Mat::zeros(1, 0), Vec::new(), Mat::zeros(0, 0)).unwrap();
        RealizationModel {
            h1: GoeSample {
                matrix: Mat::zeros(1, 1),
                lambda: 1.0,
            },
            h2: GoeSample {
                matrix: Mat::zeros(1, 1),
                lambda: 1.0,
            },
            htr: Mat::zeros(0, 0),
            v1: empty_block.clone(),
            v2: empty_block,
            w1: w.clone(),
            w2: w,
        }
    }

    #[test]
    fn decoupled_spaces_do_not_transmit() {
        let m = realization(20, 2, 3, 1).decoupled();
        let s = s_matrix_direct(&m, 0.05).unwrap();
        assert_eq!(linalg::max_abs_c(s.s_ab()), 0.0);
    }

    #[test]
    fn single_level_closed_form() {
        let v_sq = 0.3;
        let m = single_level(v_sq);
        for e in [-0.4, 0.0, 0.7] {
            let s = s_matrix_direct(&m, e).unwrap();
            let expected = C64::new(e, -PI * v_sq) / C64::new(e, PI * v_sq);
            assert!((s.s[(0, 0)] - expected).norm() < 1e-14);
            assert!((s.s[(0, 0)].norm() - 1.0).abs() < 1e-14);
            let s1 = decoupled_backscatter(&m, e, Side::One).unwrap();
            assert!((s1[(0, 0)] - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn direct_s_matrix_is_unitary_and_symmetric() {
        let m = realization(60, 3, 8, 2);
        let s = s_matrix_direct(&m, 0.0).unwrap();
        assert!(s.unitarity_defect() < UNITARITY_TOL, "{}", s.unitarity_defect());
        assert!(s.symmetry_defect() < UNITARITY_TOL);
        assert!(linalg::max_abs_diff_c(s.s_ab(), s.s_ba().transpose()) < UNITARITY_TOL);
        assert_eq!(s.block_index(9), Some((Side::Two, 1)));
        assert_eq!(s.block_index(16), None);
    }

    #[test]
    fn resummed_block_matches_direct() {
        let m = realization(40, 3, 5, 3);
        for e in [-0.15, 0.0, 0.1] {
            let direct = s_matrix_direct(&m, e).unwrap();
            let resummed = s_ab_resummed(&m, e).unwrap();
            assert!(linalg::max_abs_diff_c(direct.s_ab(), resummed.as_ref()) < 1e-10);
        }
        let closed = realization(40, 3, 5, 4).decoupled();
        assert_eq!(linalg::max_abs_c(s_ab_resummed(&closed, 0.0).unwrap().as_ref()), 0.0);
    }

    #[test]
    fn k_matrix_route_matches_direct_solve() {
        let m = realization(30, 2, 4, 5);
        let fast = KMatrixScatterer::full(&m).unwrap();
        for e in [-0.2, 0.03, 0.2] {
            let direct = s_matrix_direct(&m, e).unwrap();
            let s = fast.scattering_matrix(e, 4).unwrap();
            assert!(linalg::max_abs_diff_c(direct.s.as_ref(), s.s.as_ref()) < 1e-10);
            assert!(s.passes_gates());
        }
        let side = KMatrixScatterer::decoupled(&m, Side::Two).unwrap();
        let direct = decoupled_backscatter(&m, 0.01, Side::Two).unwrap();
        assert!(linalg::max_abs_diff_c(direct.as_ref(), side.s_matrix(0.01).unwrap().as_ref()) < 1e-10);
    }

    #[test]
    fn closed_system_on_a_level_is_singular() {
        let m = single_level(0.0);
        assert!(matches!(
            s_matrix_direct(&m, 0.0),
            Err(Error::SingularPropagator { .. })
        ));
    }

    #[test]
    fn green_functions_invert_their_propagators() {
        let m = realization(25, 2, 3, 6);
        let g = green_functions(&m, 0.02).unwrap();
        assert!(g.residual(&m) < 1e-10);
    }

    #[test]
    fn decoupled_backscatter_is_unitary() {
        let m = realization(50, 2, 6, 7);
        let s1 = decoupled_backscatter(&m, 0.0, Side::One).unwrap();
        assert!(linalg::unitarity_defect(s1.as_ref()) < 1e-10);
    }

    #[test]
    fn transmission_coefficient_limits() {
        let t = transmission_from_average(&[C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.6, 0.0)]);
        assert_eq!(t.t_values[0], 1.0);
        assert_eq!(t.t_values[1], 0.0);
        assert!((t.t_values[2] - 0.64).abs() < 1e-15);
        assert!((t.sum_t - 1.64).abs() < 1e-15);
        // noise can push |<S>| past one
        assert_eq!(transmission_from_average(&[C64::new(1.01, 0.0)]).t_values[0], 0.0);
    }

    #[test]
    fn analytic_oracle_examples() {
        assert_eq!(transmission_analytic_oracle(0.0, 1.0), 0.0);
        assert!((transmission_analytic_oracle(1.0 / PI, 1.0) - 1.0).abs() < 1e-15);
        assert!((transmission_analytic_oracle(0.5 / PI, 1.0) - 8.0 / 9.0).abs() < 1e-15);
        // depends only on x = pi v^2 / lambda
        assert!((transmission_analytic_oracle(1.0 / PI, 2.0) - 8.0 / 9.0).abs() < 1e-15);
    }
}
