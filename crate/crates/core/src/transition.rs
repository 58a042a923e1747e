//! Transport through the transition space in the many-channel limit.
//!
//! Replacing the GOE propagators by their band-center average `-i / lambda`
//! leaves a deterministic transition-space propagator
//! `G_tr(E) = (E - H_eff)^{-1}` with the complex symmetric effective Hamiltonian
//! `H_eff = Htr - i sum_j z_j^T z_j`. Its eigenvalues `E_l = eps_l - i gamma_l`
//! are the transition-state resonances. The transport factor
//!
//! ```text
//!     Y(E) = sum_{m,n} | (z1 G_tr z2^T)_{mn} |^2
//!          = sum_{m,n} | sum_l zeta1_{ml} zeta2_{nl} / (E - E_l) |^2
//! ```
//!
//! multiplies the channel factors `T_a / sum T` and `T_b / sum T` to give the
//! average transmission probability.

use faer::{Mat, MatRef};
use serde::Serialize;

use crate::ensemble::realization_rng;
use crate::error::{Error, Result};
use crate::linalg::{self, C64, I};
use crate::model::{width_matrix, ModelTemplate};
use crate::scattering::{transmission_from_average, TransmissionCoefficients, SOLVE_RESIDUAL_TOL};

/// Bilinear norms `|v^T v|` below this (for unit `v`) mark a quasi-null vector.
pub const DEFECTIVE_TOL: f64 = 1e-8;
/// Frame condition numbers above this are flagged.
pub const ILL_CONDITIONED: f64 = 1e6;
/// Tolerance on `O^T O = 1` and on the reconstruction of `H_eff`.
pub const FRAME_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct EffectiveHamiltonian {
    pub h_eff: Mat<C64>,
    /// Rows are `z_{1,m}`.
    pub z1: Mat<f64>,
    /// Rows are `z_{2,m}`.
    pub z2: Mat<f64>,
}

impl EffectiveHamiltonian {
    pub fn k(&self) -> usize {
        self.h_eff.nrows()
    }

    /// `sum_{j,m} |z_{j,m}|^2`, minus the imaginary part of the trace.
    pub fn total_coupling(&self) -> f64 {
        let sq = |z: &Mat<f64>| {
            let mut s = 0.0;
            for j in 0..z.ncols() {
                for i in 0..z.nrows() {
                    s += z[(i, j)] * z[(i, j)];
                }
            }
            s
        };
        sq(&self.z1) + sq(&self.z2)
    }
}

/// `H_eff = Htr - i (z1^T z1 + z2^T z2)`.
pub fn effective_hamiltonian(
    htr: MatRef<'_, f64>,
    z1: MatRef<'_, f64>,
    z2: MatRef<'_, f64>,
) -> Result<EffectiveHamiltonian> {
    let k = htr.nrows();
    for (name, m) in [("Htr", htr), ("z1", z1), ("z2", z2)] {
        if m.nrows() != k || m.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "{name} is {}x{}, expected {k}x{k}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    let width = z1.transpose() * z1 + z2.transpose() * z2;
    // symmetrize so that h_eff == h_eff^T holds bit for bit
    let h_eff = Mat::from_fn(k, k, |i, j| {
        let re = 0.5 * (htr[(i, j)] + htr[(j, i)]);
        let im = 0.5 * (width[(i, j)] + width[(j, i)]);
        C64::new(re, -im)
    });
    Ok(EffectiveHamiltonian {
        h_eff,
        z1: z1.to_owned(),
        z2: z2.to_owned(),
    })
}

/// `(E - H_eff)^{-1}`.
pub fn gtr_deterministic(
    htr: MatRef<'_, f64>,
    z1: MatRef<'_, f64>,
    z2: MatRef<'_, f64>,
    energy: f64,
) -> Result<Mat<C64>> {
    let h = effective_hamiltonian(htr, z1, z2)?;
    propagator(&h, energy)
}

fn propagator(h: &EffectiveHamiltonian, energy: f64) -> Result<Mat<C64>> {
    let k = h.k();
    let a = Mat::from_fn(k, k, |i, j| {
        let diag = if i == j {
            C64::new(energy, 0.0)
        } else {
            C64::new(0.0, 0.0)
        };
        diag - h.h_eff[(i, j)]
    });
    let (x, residual) = linalg::solve_checked(a.as_ref(), linalg::identity_c(k).as_ref());
    if residual > SOLVE_RESIDUAL_TOL {
        return Err(Error::SingularAtEnergy { energy });
    }
    Ok(x)
}

/// Complex orthogonal eigendecomposition `H = O diag(E) O^T`, `O^T O = 1`.
#[derive(Debug, Clone)]
pub struct Eigenframe {
    /// Sorted by real part, ties by imaginary part.
    pub eigenvalues: Vec<C64>,
    pub frame: Mat<C64>,
    /// `sigma_max / sigma_min` of the frame.
    pub condition: f64,
}

impl Eigenframe {
    pub fn is_ill_conditioned(&self) -> bool {
        self.condition > ILL_CONDITIONED
    }

    /// `max |O^T O - 1|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let g = self.frame.transpose() * &self.frame;
        linalg::max_abs_diff_c(g.as_ref(), linalg::identity_c(g.nrows()).as_ref())
    }

    /// `max |O diag(E) O^T - H|`.
    pub fn reconstruction_defect(&self, h: MatRef<'_, C64>) -> f64 {
        let k = self.eigenvalues.len();
        let scaled = Mat::from_fn(k, k, |i, l| self.frame[(i, l)] * self.eigenvalues[l]);
        let rebuilt = &scaled * self.frame.transpose();
        linalg::max_abs_diff_c(rebuilt.as_ref(), h)
    }
}

fn bilinear(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Diagonalizes a complex symmetric matrix by a complex orthogonal frame.
///
/// Eigenvectors are rescaled to unit bilinear norm `v^T v = 1`; within
/// (near-)degenerate clusters they are first orthogonalized in the bilinear
/// form. A quasi-null eigenvector (`|v^T v| < 1e-8` for unit `v`) means the
/// matrix is not diagonalizable this way and is reported as
/// [`Error::DefectiveMatrix`].
pub fn diagonalize_complex_symmetric(h: MatRef<'_, C64>) -> Result<Eigenframe> {
    let k = h.nrows();
    if h.ncols() != k {
        return Err(Error::DimensionMismatch("matrix must be square".into()));
    }
    if k == 0 {
        return Ok(Eigenframe {
            eigenvalues: Vec::new(),
            frame: Mat::zeros(0, 0),
            condition: 1.0,
        });
    }
    let scale = linalg::max_abs_c(h).max(f64::MIN_POSITIVE);

    let real_input = (0..k).all(|j| (0..k).all(|i| h[(i, j)].im == 0.0));
    let (values, vectors): (Vec<C64>, Vec<Vec<C64>>) = if real_input {
        let re = Mat::from_fn(k, k, |i, j| h[(i, j)].re);
        let (vals, u) = linalg::symmetric_eigen(re.as_ref())?;
        (
            vals.into_iter().map(|v| C64::new(v, 0.0)).collect(),
            (0..k)
                .map(|l| (0..k).map(|i| C64::new(u[(i, l)], 0.0)).collect())
                .collect(),
        )
    } else {
        let evd = h.to_owned().eigen().map_err(|_| Error::EigenSolver)?;
        let s = evd.S().column_vector();
        let u = evd.U();
        (
            (0..k).map(|l| s[l]).collect(),
            (0..k).map(|l| (0..k).map(|i| u[(i, l)]).collect()).collect(),
        )
    };

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .re
            .total_cmp(&values[b].re)
            .then(values[a].im.total_cmp(&values[b].im))
    });
    let eigenvalues: Vec<C64> = order.iter().map(|&l| values[l]).collect();
    let mut columns: Vec<Vec<C64>> = order.iter().map(|&l| vectors[l].clone()).collect();
    for v in columns.iter_mut() {
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|z| *z /= norm);
    }

    // clusters of numerically equal eigenvalues
    let cluster_tol = 1e-10 * scale;
    let mut start = 0;
    while start < k {
        let mut end = start + 1;
        while end < k && (eigenvalues[end] - eigenvalues[start]).norm() <= cluster_tol {
            end += 1;
        }
        bilinear_orthonormalize(&mut columns[start..end], start)?;
        start = end;
    }

    for v in columns.iter_mut() {
        // largest component gets a positive real part
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap_or(C64::new(1.0, 0.0));
        if pivot.re < 0.0 || (pivot.re == 0.0 && pivot.im < 0.0) {
            v.iter_mut().for_each(|z| *z = -*z);
        }
    }

    let frame = Mat::from_fn(k, k, |i, l| columns[l][i]);
    let sv = frame.singular_values().map_err(|_| Error::EigenSolver)?;
    let condition = sv[0] / sv[sv.len() - 1];
    let result = Eigenframe {
        eigenvalues,
        frame,
        condition: if condition.is_finite() {
            condition
        } else {
            f64::INFINITY
        },
    };
    let orth = result.orthogonality_defect();
    let recon = result.reconstruction_defect(h) / scale.max(1.0);
    if !(orth < FRAME_TOL && recon < FRAME_TOL) {
        return Err(Error::DefectiveMatrix {
            index: 0,
            norm: orth.max(recon),
        });
    }
    Ok(result)
}

/// Bilinear Gram-Schmidt over one eigenvalue cluster, pivoting on the largest
/// available bilinear norm.
fn bilinear_orthonormalize(cluster: &mut [Vec<C64>], offset: usize) -> Result<()> {
    let n = cluster.len();
    for i in 0..n {
        let (done, rest) = cluster.split_at_mut(i);
        for _pass in 0..2 {
            for v in rest.iter_mut() {
                for q in done.iter() {
                    let c = bilinear(q, v);
                    v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
                }
            }
        }
        for v in rest.iter_mut() {
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|z| *z /= norm);
            }
        }
        let best = (0..rest.len())
            .max_by(|&a, &b| {
                bilinear(&rest[a], &rest[a])
                    .norm()
                    .total_cmp(&bilinear(&rest[b], &rest[b]).norm())
            })
            .unwrap_or(0);
        rest.swap(0, best);
        if bilinear(&rest[0], &rest[0]).norm() < DEFECTIVE_TOL && rest.len() > 1 {
            // (1, i)-type pairs: isotropic vectors whose mutual product is not
            let partner = (1..rest.len()).max_by(|&a, &b| {
                bilinear(&rest[0], &rest[a])
                    .norm()
                    .total_cmp(&bilinear(&rest[0], &rest[b]).norm())
            });
            if let Some(p) = partner {
                let other = rest[p].clone();
                rest[0].iter_mut().zip(&other).for_each(|(x, y)| *x += y);
                let norm = rest[0].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                rest[0].iter_mut().for_each(|z| *z /= norm);
            }
        }
        let v = &mut rest[0];
        let b = bilinear(v, v);
        if b.norm() < DEFECTIVE_TOL {
            return Err(Error::DefectiveMatrix {
                index: offset + i,
                norm: b.norm(),
            });
        }
        let root = b.sqrt();
        v.iter_mut().for_each(|z| *z /= root);
    }
    Ok(())
}

/// `zeta_{ml} = sum_{m'} z[m, m'] O[m', l]`.
pub fn resonance_amplitudes(z: MatRef<'_, f64>, frame: MatRef<'_, C64>) -> Mat<C64> {
    linalg::to_complex(z) * frame
}

/// Resonances of `H_eff` with their entrance and exit amplitudes.
#[derive(Debug, Clone)]
pub struct ResonanceSet {
    /// `E_l = eps_l - i gamma_l`, sorted by `eps_l`.
    pub eigenvalues: Vec<C64>,
    pub eigenframe: Mat<C64>,
    pub zeta1: Mat<C64>,
    pub zeta2: Mat<C64>,
    pub condition: f64,
}

impl ResonanceSet {
    pub fn new(h: &EffectiveHamiltonian) -> Result<Self> {
        let frame = diagonalize_complex_symmetric(h.h_eff.as_ref())?;
        Ok(ResonanceSet {
            zeta1: resonance_amplitudes(h.z1.as_ref(), frame.frame.as_ref()),
            zeta2: resonance_amplitudes(h.z2.as_ref(), frame.frame.as_ref()),
            eigenvalues: frame.eigenvalues,
            eigenframe: frame.frame,
            condition: frame.condition,
        })
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Resonance positions `eps_l`.
    pub fn positions(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| e.re).collect()
    }

    /// Half widths `gamma_l = -Im E_l`.
    pub fn widths(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| -e.im).collect()
    }

    /// `sum_m zeta_{ml} conj(zeta_{ml'})` for side `j`.
    fn overlap(zeta: &Mat<C64>) -> Mat<C64> {
        let k = zeta.ncols();
        Mat::from_fn(k, k, |l, lp| {
            (0..zeta.nrows()).map(|m| zeta[(m, l)] * zeta[(m, lp)].conj()).sum()
        })
    }

    /// `1 / (E - E_l)`, set to zero for resonances without entrance or exit
    /// amplitude (they do not contribute, even on their real pole).
    fn poles(&self, energy: f64) -> Vec<C64> {
        let silent = |zeta: &Mat<C64>, l: usize| (0..zeta.nrows()).all(|m| zeta[(m, l)] == C64::new(0.0, 0.0));
        self.eigenvalues
            .iter()
            .enumerate()
            .map(|(l, e)| {
                if silent(&self.zeta1, l) || silent(&self.zeta2, l) {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(1.0, 0.0) / (C64::new(energy, 0.0) - e)
                }
            })
            .collect()
    }
}

/// `Y` from the deterministic propagator.
pub fn transport_factor_direct(
    htr: MatRef<'_, f64>,
    z1: MatRef<'_, f64>,
    z2: MatRef<'_, f64>,
    energy: f64,
) -> Result<f64> {
    let g = gtr_deterministic(htr, z1, z2, energy)?;
    let amp = linalg::to_complex(z1) * &g * linalg::to_complex(z2).transpose();
    Ok(sum_sq(amp.as_ref()))
}

fn sum_sq(a: MatRef<'_, C64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)].norm_sqr();
        }
    }
    s
}

/// `Y` as a coherent sum of Breit-Wigner terms.
pub fn transport_factor_resonant(res: &ResonanceSet, energy: f64) -> f64 {
    let k = res.k();
    let poles = res.poles(energy);
    let scaled = Mat::from_fn(k, k, |m, l| res.zeta1[(m, l)] * poles[l]);
    let amp = &scaled * res.zeta2.transpose();
    sum_sq(amp.as_ref())
}

/// `Y` without interference between different resonances (sum of Lorentzians).
pub fn transport_factor_isolated(res: &ResonanceSet, energy: f64) -> f64 {
    let poles = res.poles(energy);
    (0..res.k())
        .map(|l| {
            let a: f64 = (0..res.k()).map(|m| res.zeta1[(m, l)].norm_sqr()).sum();
            let b: f64 = (0..res.k()).map(|n| res.zeta2[(n, l)].norm_sqr()).sum();
            a * b * poles[l].norm_sqr()
        })
        .sum()
}

/// Diagonal (`l = l'`) and interference (`l != l'`) parts of the double sum
/// over resonance pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterferenceSplit {
    pub diagonal: f64,
    pub cross: f64,
}

impl InterferenceSplit {
    pub fn total(&self) -> f64 {
        self.diagonal + self.cross
    }
}

pub fn interference_decomposition(res: &ResonanceSet, energy: f64) -> InterferenceSplit {
    let poles = res.poles(energy);
    let o1 = ResonanceSet::overlap(&res.zeta1);
    let o2 = ResonanceSet::overlap(&res.zeta2);
    let mut diagonal = 0.0;
    let mut cross = C64::new(0.0, 0.0);
    for l in 0..res.k() {
        for lp in 0..res.k() {
            let term = o1[(l, lp)] * o2[(l, lp)] * poles[l] * poles[lp].conj();
            if l == lp {
                diagonal += term.re;
            } else {
                cross += term;
            }
        }
    }
    // the l != l' terms pair up into complex conjugates
    InterferenceSplit {
        diagonal,
        cross: cross.re,
    }
}

/// `P_ab(E) = (T_a / sum T_1) Y(E) (T_b / sum T_2)`.
pub fn analytic_transmission(
    t1: &TransmissionCoefficients,
    t2: &TransmissionCoefficients,
    res: &ResonanceSet,
    energy: f64,
    channel_a: usize,
    channel_b: usize,
) -> Result<f64> {
    check_channel(t1, channel_a, 1)?;
    check_channel(t2, channel_b, 2)?;
    Ok(t1.relative(channel_a) * transport_factor_resonant(res, energy) * t2.relative(channel_b))
}

/// `sum_b P_ab(E) = (T_a / sum T_1) Y(E)`.
pub fn analytic_total_transmission(
    t1: &TransmissionCoefficients,
    res: &ResonanceSet,
    energy: f64,
    channel_a: usize,
) -> Result<f64> {
    check_channel(t1, channel_a, 1)?;
    Ok(t1.relative(channel_a) * transport_factor_resonant(res, energy))
}

fn check_channel(t: &TransmissionCoefficients, channel: usize, side: usize) -> Result<()> {
    if channel >= t.t_values.len() {
        return Err(Error::InvalidArgument(format!(
            "channel {channel} out of range for side {side} ({} channels)",
            t.t_values.len()
        )));
    }
    if !(t.sum_t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "side {side} has no open channel (sum T = 0)"
        )));
    }
    Ok(())
}

/// Monte Carlo estimate of the channel-to-transition correlator
/// `X_{a,m'm''} = 2 pi < (W G1 O1)_{a m'} conj((W G1 O1)_{a m''}) >`.
#[derive(Debug, Clone, Serialize)]
pub struct CorrelatorReport {
    pub energy: f64,
    pub lambda: f64,
    pub n_realizations: usize,
    pub transmission: TransmissionCoefficients,
    /// `[a][m]` diagonal estimates.
    pub diagonal: Vec<Vec<f64>>,
    pub diagonal_err: Vec<Vec<f64>>,
    /// `T_a / (lambda sum T)`.
    pub predicted: Vec<f64>,
    /// Mean over `(a, m)` of measured / predicted.
    pub mean_ratio: f64,
    /// Worst `|measured / predicted - 1|` over `(a, m)`.
    pub max_rel_deviation: f64,
    /// Largest `|X_{a,m'm''}| / std_error` over `m' != m''`.
    pub max_offdiag_z: f64,
    /// `sum_a X_{a,mm}` averaged over `m`, next to its predicted value `1 / lambda`.
    pub channel_sum: f64,
}

/// Samples `n_realizations` decoupled GOE spaces from `template` (frames and
/// channel matrices redrawn each time) and measures `X` at `energy`.
pub fn channel_resonance_correlator_check(
    template: &ModelTemplate,
    n_realizations: usize,
    energy: f64,
    master_seed: u64,
) -> Result<CorrelatorReport> {
    let cfg = &template.config;
    let (n, k, l) = (cfg.n_dim, cfg.k_trans, cfg.channel_strengths_1.len());
    if n_realizations < 2 {
        return Err(Error::InvalidArgument("need at least two realizations".into()));
    }
    let mut sum = vec![C64::new(0.0, 0.0); l * k * k];
    let mut sum_sq = vec![0.0; l * k * k];
    let mut s_diag = vec![C64::new(0.0, 0.0); l];
    for r in 0..n_realizations {
        let mut rng = realization_rng(master_seed, r as u64);
        let model = template.sample(true, &mut rng)?;
        let gamma = width_matrix(&model.w1).gamma;
        let d = Mat::from_fn(n, n, |i, j| {
            let diag = if i == j { energy } else { 0.0 };
            C64::new(diag - model.h1.matrix[(i, j)], 0.5 * gamma[(i, j)])
        });
        let rhs = Mat::from_fn(n, l, |mu, a| C64::new(model.w1.rows[(a, mu)], 0.0));
        let (gw, residual) = linalg::solve_checked(d.as_ref(), rhs.as_ref());
        if residual > SOLVE_RESIDUAL_TOL {
            return Err(Error::SingularPropagator { energy, residual });
        }
        // A = W G1 O1 = (G1 W^T)^T O1
        let amp = gw.transpose() * linalg::to_complex(model.v1.left_frame.as_ref());
        let wgw = linalg::to_complex(model.w1.rows.as_ref()) * &gw;
        for a in 0..l {
            s_diag[a] += C64::new(1.0, 0.0) - 2.0 * std::f64::consts::PI * I * wgw[(a, a)];
            for mp in 0..k {
                for mpp in 0..k {
                    let x = 2.0 * std::f64::consts::PI * amp[(a, mp)] * amp[(a, mpp)].conj();
                    let idx = (a * k + mp) * k + mpp;
                    sum[idx] += x;
                    sum_sq[idx] += x.norm_sqr();
                }
            }
        }
    }
    let nf = n_realizations as f64;
    let avg: Vec<C64> = s_diag.iter().map(|s| s / nf).collect();
    let transmission = transmission_from_average(&avg);
    let mean_of = |idx: usize| sum[idx] / nf;
    let err_of = |idx: usize| {
        let m = sum[idx] / nf;
        ((sum_sq[idx] / nf - m.norm_sqr()).max(0.0) / (nf - 1.0)).sqrt()
    };

    let predicted: Vec<f64> = (0..l).map(|a| transmission.relative(a) / cfg.lambda).collect();
    let mut diagonal = vec![vec![0.0; k]; l];
    let mut diagonal_err = vec![vec![0.0; k]; l];
    let mut ratio_sum = 0.0;
    let mut max_rel_deviation = 0.0f64;
    let mut max_offdiag_z = 0.0f64;
    let mut channel_sum = 0.0;
    for a in 0..l {
        for mp in 0..k {
            for mpp in 0..k {
                let idx = (a * k + mp) * k + mpp;
                if mp == mpp {
                    let x = mean_of(idx).re;
                    diagonal[a][mp] = x;
                    diagonal_err[a][mp] = err_of(idx);
                    let ratio = x / predicted[a];
                    ratio_sum += ratio;
                    max_rel_deviation = max_rel_deviation.max((ratio - 1.0).abs());
                    channel_sum += x / k as f64;
                } else {
                    let e = err_of(idx);
                    if e > 0.0 {
                        max_offdiag_z = max_offdiag_z.max(mean_of(idx).norm() / e);
                    }
                }
            }
        }
    }
    Ok(CorrelatorReport {
        energy,
        lambda: cfg.lambda,
        n_realizations,
        transmission,
        diagonal,
        diagonal_err,
        predicted,
        mean_ratio: ratio_sum / (l * k) as f64,
        max_rel_deviation,
        max_offdiag_z,
        channel_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_instance(k: usize, seed: u64) -> (Mat<f64>, Mat<f64>, Mat<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = linalg::gaussian_matrix(k, k, 0.05, &mut rng);
        let htr = Mat::from_fn(k, k, |i, j| a[(i, j)] + a[(j, i)]);
        let z1 = linalg::gaussian_matrix(k, k, 0.08, &mut rng);
        let z2 = linalg::gaussian_matrix(k, k, 0.06, &mut rng);
        (htr, z1, z2)
    }

    fn scalar(x: f64) -> Mat<f64> {
        Mat::from_fn(1, 1, |_, _| x)
    }

    #[test]
    fn scalar_propagator() {
        let (eps, u, w, e) = (0.03, 0.2, 0.1, -0.01);
        let g = gtr_deterministic(scalar(eps).as_ref(), scalar(u).as_ref(), scalar(w).as_ref(), e).unwrap();
        let expected = C64::new(1.0, 0.0) / C64::new(e - eps, u * u + w * w);
        assert!((g[(0, 0)] - expected).norm() < 1e-14);
    }

    #[test]
    fn uncoupled_propagator_is_the_bare_resolvent() {
        let (htr, _, _) = random_instance(3, 1);
        let zero = Mat::<f64>::zeros(3, 3);
        let g = gtr_deterministic(htr.as_ref(), zero.as_ref(), zero.as_ref(), 0.3).unwrap();
        let shifted = Mat::from_fn(3, 3, |i, j| C64::new(if i == j { 0.3 } else { 0.0 } - htr[(i, j)], 0.0));
        let prod = &shifted * &g;
        assert!(linalg::max_abs_diff_c(prod.as_ref(), linalg::identity_c(3).as_ref()) < 1e-12);

        let levels = linalg::symmetric_eigen(htr.as_ref()).unwrap().0;
        assert!(matches!(
            gtr_deterministic(htr.as_ref(), zero.as_ref(), zero.as_ref(), levels[1]),
            Err(Error::SingularAtEnergy { .. })
        ));
    }

    #[test]
    fn propagator_residual() {
        let (htr, z1, z2) = random_instance(3, 2);
        let h = effective_hamiltonian(htr.as_ref(), z1.as_ref(), z2.as_ref()).unwrap();
        let g = gtr_deterministic(htr.as_ref(), z1.as_ref(), z2.as_ref(), 0.02).unwrap();
        let a = Mat::from_fn(3, 3, |i, j| {
            C64::new(if i == j { 0.02 } else { 0.0 }, 0.0) - h.h_eff[(i, j)]
        });
        assert!(linalg::max_abs_diff_c((&a * &g).as_ref(), linalg::identity_c(3).as_ref()) < 1e-12);
    }

    #[test]
    fn effective_hamiltonian_examples() {
        let (htr, z1, z2) = random_instance(3, 3);
        let zero = Mat::<f64>::zeros(3, 3);
        let bare = effective_hamiltonian(htr.as_ref(), zero.as_ref(), zero.as_ref()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(bare.h_eff[(i, j)], C64::new(htr[(i, j)], 0.0));
            }
        }

        let one = effective_hamiltonian(scalar(0.1).as_ref(), scalar(0.2).as_ref(), scalar(0.3).as_ref()).unwrap();
        assert!((one.h_eff[(0, 0)] - C64::new(0.1, -0.13)).norm() < 1e-15);

        let h = effective_hamiltonian(htr.as_ref(), z1.as_ref(), z2.as_ref()).unwrap();
        let im_trace: f64 = (0..3).map(|i| h.h_eff[(i, i)].im).sum();
        let direct: f64 = (0..3)
            .flat_map(|m| (0..3).map(move |c| (m, c)))
            .map(|(m, c)| z1[(m, c)].powi(2) + z2[(m, c)].powi(2))
            .sum();
        assert!((im_trace + direct).abs() < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(h.h_eff[(i, j)], h.h_eff[(j, i)]);
            }
        }
    }

    #[test]
    fn real_symmetric_input_gives_real_frame() {
        let (htr, _, _) = random_instance(4, 4);
        let f = diagonalize_complex_symmetric(linalg::to_complex(htr.as_ref()).as_ref()).unwrap();
        assert!(f.eigenvalues.iter().all(|e| e.im == 0.0));
        assert!((0..4).all(|j| (0..4).all(|i| f.frame[(i, j)].im == 0.0)));
        assert!(f.orthogonality_defect() < 1e-12);
        assert!(f.eigenvalues.windows(2).all(|p| p[0].re <= p[1].re));
    }

    #[test]
    fn one_level_resonance() {
        let h = effective_hamiltonian(scalar(0.05).as_ref(), scalar(0.2).as_ref(), scalar(0.1).as_ref()).unwrap();
        let res = ResonanceSet::new(&h).unwrap();
        assert!((res.eigenvalues[0] - C64::new(0.05, -0.05)).norm() < 1e-15);
        assert!((res.eigenframe[(0, 0)] - C64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn two_level_reconstruction() {
        let (htr, z1, z2) = random_instance(2, 5);
        let h = effective_hamiltonian(htr.as_ref(), z1.as_ref(), z2.as_ref()).unwrap();
        let f = diagonalize_complex_symmetric(h.h_eff.as_ref()).unwrap();
        assert!(f.reconstruction_defect(h.h_eff.as_ref()) < 1e-8);
        assert!(f.orthogonality_defect() < 1e-8);
        assert!(f.eigenvalues.iter().all(|e| e.im < 0.0));
    }

    #[test]
    fn degenerate_cluster_is_bilinear_orthonormalized() {
        // -i g 1 : every vector is an eigenvector
        let h = Mat::from_fn(3, 3, |i, j| {
            if i == j {
                C64::new(0.0, -0.02)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let f = diagonalize_complex_symmetric(h.as_ref()).unwrap();
        assert!(f.orthogonality_defect() < 1e-12);
    }

    #[test]
    fn nilpotent_complex_symmetric_matrix_is_defective() {
        // [[1, i], [i, -1]] squares to zero
        let h = Mat::from_fn(2, 2, |i, j| {
            if i == j {
                C64::new(if i == 0 { 1.0 } else { -1.0 }, 0.0)
            } else {
                I
            }
        });
        assert!(matches!(
            diagonalize_complex_symmetric(h.as_ref()),
            Err(Error::DefectiveMatrix { .. })
        ));
    }

    #[test]
    fn amplitude_examples() {
        let (_, z1, _) = random_instance(3, 6);
        let id = linalg::identity_c(3);
        let zeta = resonance_amplitudes(z1.as_ref(), id.as_ref());
        assert!(linalg::max_abs_diff_c(zeta.as_ref(), linalg::to_complex(z1.as_ref()).as_ref()) == 0.0);
        let zero = resonance_amplitudes(Mat::<f64>::zeros(3, 3).as_ref(), id.as_ref());
        assert_eq!(linalg::max_abs_c(zero.as_ref()), 0.0);
    }

    #[test]
    fn amplitude_bilinear_sum_rule() {
        let (htr, z1, z2) = random_instance(3, 7);
        let h = effective_hamiltonian(htr.as_ref(), z1.as_ref(), z2.as_ref()).unwrap();
        let res = ResonanceSet::new(&h).unwrap();
        let lhs = res.zeta1.transpose() * &res.zeta1;
        let ztz = linalg::to_complex((z1.transpose() * &z1).as_ref());
        let rhs = res.eigenframe.transpose() * &ztz * &res.eigenframe;
        assert!(linalg::max_abs_diff_c(lhs.as_ref(), rhs.as_ref()) < 1e-10);
    }

    #[test]
    fn transport_factor_forms_agree() {
        let (htr, z1, z2) = random_instance(3, 8);
        let h = effective_hamiltonian(htr.as_ref(), z1.as_ref(), z2.as_ref()).unwrap();
        let res = ResonanceSet::new(&h).unwrap();
        for e in [-0.2, -0.05, 0.0, 0.07, 0.3] {
            let direct = transport_factor_direct(htr.as_ref(), z1.as_ref(), z2.as_ref(), e).unwrap();
            let resonant = transport_factor_resonant(&res, e);
            let split = interference_decomposition(&res, e);
            assert!((direct - resonant).abs() < 1e-10 * direct.max(1.0));
            assert!((split.total() - resonant).abs() < 1e-10 * resonant.max(1.0));
            assert!((split.diagonal - transport_factor_isolated(&res, e)).abs() < 1e-12);
        }
        let zero = Mat::<f64>::zeros(3, 3);
        assert_eq!(
            transport_factor_direct(htr.as_ref(), z1.as_ref(), zero.as_ref(), 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn symmetric_single_resonance_peaks_at_a_quarter() {
        let (eps, g) = (0.013f64, 0.004f64);
        let z = scalar(g.sqrt());
        let y = transport_factor_direct(scalar(eps).as_ref(), z.as_ref(), z.as_ref(), eps).unwrap();
        assert!((y - 0.25).abs() < 1e-12, "{y}");
    }

    #[test]
    fn single_resonance_is_a_lorentzian() {
        let (eps, u, w) = (0.02, 0.15, 0.1);
        let h = effective_hamiltonian(scalar(eps).as_ref(), scalar(u).as_ref(), scalar(w).as_ref()).unwrap();
        let res = ResonanceSet::new(&h).unwrap();
        let gamma = u * u + w * w;
        for e in [-0.1, 0.0, 0.02, 0.05] {
            let lorentz = (u * w).powi(2) / ((e - eps).powi(2) + gamma * gamma);
            assert!((transport_factor_resonant(&res, e) - lorentz).abs() < 1e-14);
            assert!((transport_factor_isolated(&res, e) - transport_factor_resonant(&res, e)).abs() < 1e-14);
            assert_eq!(interference_decomposition(&res, e).cross, 0.0);
        }
        let peak = transport_factor_resonant(&res, eps);
        let far = transport_factor_resonant(&res, eps + 101.0 * gamma);
        assert!(far < 1e-3 * peak);
    }

    #[test]
    fn analytic_transmission_examples() {
        let (htr, z1, z2) = random_instance(3, 9);
        let h = effective_hamiltonian(htr.as_ref(), z1.as_ref(), z2.as_ref()).unwrap();
        let res = ResonanceSet::new(&h).unwrap();
        let t1 = TransmissionCoefficients::new(vec![0.8; 4]);
        let t2 = TransmissionCoefficients::new(vec![0.8; 4]);
        let y = transport_factor_resonant(&res, 0.01);
        let p = analytic_transmission(&t1, &t2, &res, 0.01, 1, 2).unwrap();
        assert!((p - y / 16.0).abs() < 1e-15);

        let t2 = TransmissionCoefficients::new(vec![0.1, 0.5, 0.9]);
        let total: f64 = (0..3)
            .map(|b| analytic_transmission(&t1, &t2, &res, 0.01, 0, b).unwrap())
            .sum();
        let m12a = analytic_total_transmission(&t1, &res, 0.01, 0).unwrap();
        assert!((total - m12a).abs() < 1e-15);
        assert!(analytic_transmission(&t1, &t2, &res, 0.01, 0, 3).is_err());

        let zero = Mat::<f64>::zeros(3, 3);
        let closed =
            ResonanceSet::new(&effective_hamiltonian(htr.as_ref(), z1.as_ref(), zero.as_ref()).unwrap()).unwrap();
        assert_eq!(analytic_transmission(&t1, &t2, &closed, 0.01, 0, 0).unwrap(), 0.0);
    }
}
