//! Monte Carlo averages over GOE realizations and their confrontation with the
//! deterministic transition-space result.
//!
//! Realization `r` draws from its own ChaCha stream `(master_seed, r)`, so any
//! single realization can be replayed. Work is split into chunks evaluated in
//! parallel, and chunk results are folded in realization order; the accumulated
//! sums therefore do not depend on the number of workers.

use faer::Mat;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::model::{
    decompose_coupling, sample_channel_matrix, sample_goe, width_matrix, ConfigWarning, ModelConfig, ModelTemplate,
};
use crate::scattering::{
    s_ab_resummed, s_matrix_direct, transmission_from_average, KMatrixScatterer, Side, TransmissionCoefficients,
    SOLVE_RESIDUAL_TOL, UNITARITY_TOL,
};
use crate::stats::{jackknife, mean_without, BlockSums, Blocking, Estimate};
use crate::transition::{
    analytic_transmission, effective_hamiltonian, interference_decomposition, transport_factor_direct,
    transport_factor_isolated, transport_factor_resonant, ResonanceSet,
};

/// Energies must lie within this multiple of `lambda` of the band center.
pub const ENERGY_WINDOW: f64 = 0.5;
/// Largest tolerated fraction of skipped realizations.
pub const MAX_SKIPPED_FRACTION: f64 = 0.01;
/// Average probabilities below this make amplitude ratios meaningless.
pub const NEGLIGIBLE_PROBABILITY: f64 = 1e-20;

pub const VANISHING_THRESHOLD: f64 = 0.05;
pub const FACTORIZATION_TOL: f64 = 0.10;
/// In units of `1 / lambda`.
pub const GREEN_CENTER_TOL: f64 = 0.05;
pub const CONFRONTATION_REL_TOL: f64 = 0.15;
pub const CONFRONTATION_SIGMAS: f64 = 3.0;
/// Round-trip tolerance of the coupling decomposition.
pub const ROUND_TRIP_TOL: f64 = 1e-12;
/// Agreement required between the equivalent evaluations of `S` and `Y`.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Independent stream for realization `index`; identical for any worker count.
pub fn realization_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// `points` equally spaced energies from `min` to `max` inclusive.
pub fn energy_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![min],
        _ => (0..points)
            .map(|i| min + (max - min) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub model: ModelConfig,
    pub n_realizations: usize,
    /// Sorted ascending.
    pub energy_grid: Vec<f64>,
    /// Redraw the GOE-side frames and channel matrices for every realization.
    pub resample_frames: bool,
    pub master_seed: u64,
    /// Number of worker threads; never affects results, so it is not serialized.
    #[serde(skip, default = "default_workers")]
    pub worker_hint: usize,
}

impl EnsembleConfig {
    /// 200 realizations on 41 energies in `[-0.2 lambda, 0.2 lambda]`.
    pub fn new(model: ModelConfig) -> Self {
        let lambda = model.lambda;
        let master_seed = model.seed;
        EnsembleConfig {
            model,
            n_realizations: 200,
            energy_grid: energy_grid(-0.2 * lambda, 0.2 * lambda, 41),
            resample_frames: true,
            master_seed,
            worker_hint: 1,
        }
    }

    pub fn validate(&self) -> Result<Vec<ConfigWarning>> {
        let mut errors = match self.model.validate() {
            Ok(_) => Vec::new(),
            Err(Error::Validation(e)) => e,
            Err(e) => return Err(e),
        };
        if self.n_realizations < 2 {
            errors.push(format!(
                "n_realizations must be at least 2, got {}",
                self.n_realizations
            ));
        }
        if self.worker_hint == 0 {
            errors.push("worker_hint must be positive".to_string());
        }
        if self.energy_grid.is_empty() {
            errors.push("energy grid is empty".to_string());
        }
        if self.energy_grid.windows(2).any(|w| !(w[0] <= w[1])) {
            errors.push("energy grid must be sorted ascending".to_string());
        }
        let limit = ENERGY_WINDOW * self.model.lambda;
        if let Some(e) = self.energy_grid.iter().find(|e| !(e.abs() <= limit)) {
            errors.push(format!("energy {e} lies outside |E| <= {limit}"));
        }
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        self.model.validate()
    }
}

/// Evaluates `work` for realizations `0..n` on `workers` threads and hands the
/// successful results to `consume` in realization order. Returns the number of
/// skipped realizations.
fn for_each_realization<T, F, C>(n: usize, workers: usize, work: F, mut consume: C) -> Result<usize>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
    C: FnMut(usize, T),
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let chunk = 4 * workers.max(1);
    let mut skipped = 0;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let results: Vec<Result<T>> = pool.install(|| (start..end).into_par_iter().map(&work).collect());
        for (index, result) in (start..end).zip(results) {
            match result {
                Ok(value) => consume(index, value),
                Err(_) => skipped += 1,
            }
        }
        start = end;
    }
    if skipped as f64 > MAX_SKIPPED_FRACTION * n as f64 {
        return Err(Error::TooManySkipped { skipped, total: n });
    }
    Ok(skipped)
}

/// Per-realization (or per-block) sums, flattened as `[energy][entry]`.
#[derive(Debug, Clone)]
struct Sums {
    s_ab: Vec<C64>,
    p_ab: Vec<f64>,
    s1: Vec<C64>,
    s2: Vec<C64>,
    s_aa: Vec<C64>,
    s_bb: Vec<C64>,
}

impl Sums {
    fn zeros(n_e: usize, l1: usize, l2: usize) -> Self {
        let z = C64::new(0.0, 0.0);
        Sums {
            s_ab: vec![z; n_e * l1 * l2],
            p_ab: vec![0.0; n_e * l1 * l2],
            s1: vec![z; n_e * l1],
            s2: vec![z; n_e * l2],
            s_aa: vec![z; n_e * l1],
            s_bb: vec![z; n_e * l2],
        }
    }

    fn add(&mut self, other: &Sums) {
        fn add_c(a: &mut [C64], b: &[C64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        add_c(&mut self.s_ab, &other.s_ab);
        self.p_ab.iter_mut().zip(&other.p_ab).for_each(|(x, y)| *x += y);
        add_c(&mut self.s1, &other.s1);
        add_c(&mut self.s2, &other.s2);
        add_c(&mut self.s_aa, &other.s_aa);
        add_c(&mut self.s_bb, &other.s_bb);
    }
}

fn simulate(template: &ModelTemplate, cfg: &EnsembleConfig, index: usize) -> Result<Sums> {
    let mut rng = realization_rng(cfg.master_seed, index as u64);
    let model = template.sample(cfg.resample_frames, &mut rng)?;
    let (l1, l2) = (model.channels_1(), model.channels_2());
    let full = KMatrixScatterer::full(&model)?;
    let dec1 = KMatrixScatterer::decoupled(&model, Side::One)?;
    let dec2 = KMatrixScatterer::decoupled(&model, Side::Two)?;
    let mut sums = Sums::zeros(cfg.energy_grid.len(), l1, l2);
    for (e, &energy) in cfg.energy_grid.iter().enumerate() {
        let s = full.scattering_matrix(energy, l1)?;
        if !s.passes_gates() {
            return Err(Error::SingularPropagator {
                energy,
                residual: s.unitarity_defect().max(s.symmetry_defect()),
            });
        }
        for a in 0..l1 {
            for b in 0..l2 {
                let x = s.s[(a, l1 + b)];
                sums.s_ab[(e * l1 + a) * l2 + b] = x;
                sums.p_ab[(e * l1 + a) * l2 + b] = x.norm_sqr();
            }
            sums.s_aa[e * l1 + a] = s.s[(a, a)];
        }
        for b in 0..l2 {
            sums.s_bb[e * l2 + b] = s.s[(l1 + b, l1 + b)];
        }
        let s1 = dec1.s_matrix(energy)?;
        let s2 = dec2.s_matrix(energy)?;
        for a in 0..l1 {
            sums.s1[e * l1 + a] = s1[(a, a)];
        }
        for b in 0..l2 {
            sums.s2[e * l2 + b] = s2[(b, b)];
        }
    }
    Ok(sums)
}

/// Observables at one grid energy. Pair arrays are row-major over
/// `(a, b)`, `a` a channel of space 1 and `b` one of space 2.
#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub energy: f64,
    /// `<|S_ab|^2>`.
    pub p_mc: Vec<Estimate>,
    pub p_analytic: Vec<f64>,
    /// `<S_ab>` as `[re, im]`.
    pub s_mean: Vec<[f64; 2]>,
    /// `|<S_ab>|^2 / <|S_ab|^2>`.
    pub rho: Vec<Estimate>,
    /// Diagonal `<S_aa>` and `<S_bb>` of the coupled system.
    pub s_aa_mean: Vec<[f64; 2]>,
    pub s_bb_mean: Vec<[f64; 2]>,
    /// From the decoupled backscattering averages.
    pub t1: TransmissionCoefficients,
    pub t2: TransmissionCoefficients,
    pub y: f64,
    pub y_isolated: f64,
    pub y_cross: f64,
    /// `sum_b <|S_ab|^2>` per channel `a`.
    pub total_mc: Vec<Estimate>,
    pub total_analytic: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransmissionCurve {
    pub energies: Vec<f64>,
    pub channels_1: usize,
    pub channels_2: usize,
    /// Realizations accumulated.
    pub n_realizations: usize,
    pub skipped: usize,
    /// Resonances of the effective Hamiltonian as `[position, half width]`.
    pub resonances: Vec<[f64; 2]>,
    pub points: Vec<CurvePoint>,
}

impl TransmissionCurve {
    pub fn pair_index(&self, a: usize, b: usize) -> usize {
        a * self.channels_2 + b
    }
}

fn to_pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

/// Resonances of the deterministic transition-space problem of `template`.
pub fn template_resonances(template: &ModelTemplate) -> Result<ResonanceSet> {
    let h = effective_hamiltonian(template.htr.as_ref(), template.z1().as_ref(), template.z2().as_ref())?;
    ResonanceSet::new(&h)
}

pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<TransmissionCurve> {
    cfg.validate()?;
    let template = ModelTemplate::new(&cfg.model)?;
    let resonances = template_resonances(&template)?;
    let (l1, l2) = (cfg.model.channel_strengths_1.len(), cfg.model.channel_strengths_2.len());
    let n_e = cfg.energy_grid.len();
    let blocking = Blocking::new(cfg.n_realizations);
    let mut blocks = vec![Sums::zeros(n_e, l1, l2); blocking.n_blocks];
    let mut counts = vec![0usize; blocking.n_blocks];
    let skipped = for_each_realization(
        cfg.n_realizations,
        cfg.worker_hint,
        |r| simulate(&template, cfg, r),
        |r, sums| {
            let g = blocking.block_of(r);
            blocks[g].add(&sums);
            counts[g] += 1;
        },
    )?;
    let n_acc: usize = counts.iter().sum();
    let mut total = Sums::zeros(n_e, l1, l2);
    for b in &blocks {
        total.add(b);
    }
    let nf = n_acc as f64;

    let real_mean = |pick: &dyn Fn(&Sums) -> f64, skip: Option<usize>| {
        let sums: Vec<f64> = blocks.iter().map(pick).collect();
        mean_without(&sums, &counts, skip)
    };

    let mut points = Vec::with_capacity(n_e);
    for (e, &energy) in cfg.energy_grid.iter().enumerate() {
        let avg = |v: &[C64], n: usize| -> Vec<C64> { (0..n).map(|i| v[e * n + i] / nf).collect() };
        let t1 = transmission_from_average(&avg(&total.s1, l1));
        let t2 = transmission_from_average(&avg(&total.s2, l2));
        let split = interference_decomposition(&resonances, energy);
        let y = transport_factor_resonant(&resonances, energy);

        let mut p_mc = Vec::with_capacity(l1 * l2);
        let mut p_analytic = Vec::with_capacity(l1 * l2);
        let mut s_mean = Vec::with_capacity(l1 * l2);
        let mut rho = Vec::with_capacity(l1 * l2);
        for a in 0..l1 {
            for b in 0..l2 {
                let idx = (e * l1 + a) * l2 + b;
                let p = jackknife(&counts, |g| real_mean(&|s: &Sums| s.p_ab[idx], g));
                let ratio = |g: Option<usize>| {
                    let re = real_mean(&|s: &Sums| s.s_ab[idx].re, g);
                    let im = real_mean(&|s: &Sums| s.s_ab[idx].im, g);
                    let pm = real_mean(&|s: &Sums| s.p_ab[idx], g);
                    if pm > NEGLIGIBLE_PROBABILITY {
                        (re * re + im * im) / pm
                    } else {
                        0.0
                    }
                };
                rho.push(jackknife(&counts, ratio));
                p_mc.push(p);
                s_mean.push(to_pair(total.s_ab[idx] / nf));
                p_analytic.push(if t1.sum_t > 0.0 && t2.sum_t > 0.0 {
                    analytic_transmission(&t1, &t2, &resonances, energy, a, b)?
                } else {
                    0.0
                });
            }
        }
        let total_mc = (0..l1)
            .map(|a| {
                jackknife(&counts, |g| {
                    real_mean(&|s: &Sums| (0..l2).map(|b| s.p_ab[(e * l1 + a) * l2 + b]).sum(), g)
                })
            })
            .collect();
        let total_analytic = (0..l1)
            .map(|a| if t1.sum_t > 0.0 { t1.relative(a) * y } else { 0.0 })
            .collect();
        points.push(CurvePoint {
            energy,
            p_mc,
            p_analytic,
            s_mean,
            rho,
            s_aa_mean: avg(&total.s_aa, l1).into_iter().map(to_pair).collect(),
            s_bb_mean: avg(&total.s_bb, l2).into_iter().map(to_pair).collect(),
            t1,
            t2,
            y,
            y_isolated: transport_factor_isolated(&resonances, energy),
            y_cross: split.cross,
            total_mc,
            total_analytic,
        });
    }
    Ok(TransmissionCurve {
        energies: cfg.energy_grid.clone(),
        channels_1: l1,
        channels_2: l2,
        n_realizations: n_acc,
        skipped,
        resonances: resonances.eigenvalues.iter().map(|e| [e.re, -e.im]).collect(),
        points,
    })
}

/// Monte Carlo against the analytic transmission probability.
#[derive(Debug, Clone, Serialize)]
pub struct ConfrontationReport {
    pub rel_tol: f64,
    pub sigmas: f64,
    /// Largest `|p_mc - p_analytic| / max(rel_tol p_analytic, sigmas std_error)`; at most 1 when passing.
    pub worst_score: f64,
    pub worst_energy: f64,
    pub worst_pair: [usize; 2],
    pub failures: usize,
    pub checked: usize,
    /// Same score for the total transmission out of each channel of space 1.
    pub worst_total_score: f64,
    pub total_failures: usize,
    /// `sum p_mc / sum p_analytic` over the whole grid.
    pub overall_ratio: f64,
    pub passes: bool,
}

fn confrontation_score(mc: &Estimate, analytic: f64) -> f64 {
    let allowed = (CONFRONTATION_REL_TOL * analytic).max(CONFRONTATION_SIGMAS * mc.std_error);
    let diff = (mc.mean - analytic).abs();
    if allowed > 0.0 {
        diff / allowed
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn confront(curve: &TransmissionCurve) -> ConfrontationReport {
    let mut report = ConfrontationReport {
        rel_tol: CONFRONTATION_REL_TOL,
        sigmas: CONFRONTATION_SIGMAS,
        worst_score: 0.0,
        worst_energy: f64::NAN,
        worst_pair: [0, 0],
        failures: 0,
        checked: 0,
        worst_total_score: 0.0,
        total_failures: 0,
        overall_ratio: f64::NAN,
        passes: false,
    };
    let (mut sum_mc, mut sum_an) = (0.0, 0.0);
    for point in &curve.points {
        for a in 0..curve.channels_1 {
            for b in 0..curve.channels_2 {
                let idx = curve.pair_index(a, b);
                let score = confrontation_score(&point.p_mc[idx], point.p_analytic[idx]);
                sum_mc += point.p_mc[idx].mean;
                sum_an += point.p_analytic[idx];
                report.checked += 1;
                if !(score <= 1.0) {
                    report.failures += 1;
                }
                if !(score <= report.worst_score) {
                    report.worst_score = score;
                    report.worst_energy = point.energy;
                    report.worst_pair = [a, b];
                }
            }
            let score = confrontation_score(&point.total_mc[a], point.total_analytic[a]);
            if !(score <= 1.0) {
                report.total_failures += 1;
            }
            report.worst_total_score = report.worst_total_score.max(score);
        }
    }
    report.overall_ratio = sum_mc / sum_an;
    report.passes = report.failures == 0 && report.total_failures == 0;
    report
}

#[derive(Debug, Clone, Serialize)]
pub struct VanishingReport {
    pub applicable: bool,
    pub threshold: f64,
    /// Worst pair of `sum_E |<S_ab>|^2 / sum_E <|S_ab|^2>`.
    pub max_pair_ratio: f64,
    pub worst_pair: [usize; 2],
    /// Worst single `(pair, energy)` ratio.
    pub max_point_ratio: f64,
    pub mean_ratio: f64,
    pub passes: bool,
}

/// Compares `|<S_ab>|^2` with `<|S_ab|^2>`. A pair passes when its ratio,
/// pooled over the energy grid, stays below [`VANISHING_THRESHOLD`].
pub fn vanishing_amplitude_check(curve: &TransmissionCurve) -> VanishingReport {
    let (l1, l2) = (curve.channels_1, curve.channels_2);
    let mut report = VanishingReport {
        applicable: false,
        threshold: VANISHING_THRESHOLD,
        max_pair_ratio: 0.0,
        worst_pair: [0, 0],
        max_point_ratio: 0.0,
        mean_ratio: 0.0,
        passes: true,
    };
    let mut ratio_sum = 0.0;
    let mut ratio_count = 0usize;
    for a in 0..l1 {
        for b in 0..l2 {
            let idx = curve.pair_index(a, b);
            let (mut amp, mut prob) = (0.0, 0.0);
            for point in &curve.points {
                let [re, im] = point.s_mean[idx];
                let p = point.p_mc[idx].mean;
                amp += re * re + im * im;
                prob += p;
                if p > NEGLIGIBLE_PROBABILITY {
                    let r = (re * re + im * im) / p;
                    report.max_point_ratio = report.max_point_ratio.max(r);
                    ratio_sum += r;
                    ratio_count += 1;
                }
            }
            if prob > NEGLIGIBLE_PROBABILITY * curve.points.len() as f64 {
                report.applicable = true;
                let r = amp / prob;
                if r > report.max_pair_ratio {
                    report.max_pair_ratio = r;
                    report.worst_pair = [a, b];
                }
            }
        }
    }
    if ratio_count > 0 {
        report.mean_ratio = ratio_sum / ratio_count as f64;
    }
    report.passes = !report.applicable || report.max_pair_ratio < VANISHING_THRESHOLD;
    report
}

#[derive(Debug, Clone, Serialize)]
pub struct FactorizationReport {
    pub n_realizations: usize,
    pub skipped: usize,
    pub energies: Vec<f64>,
    /// Transmission coefficients averaged over the grid.
    pub t_mean: Vec<f64>,
    /// `<|S1_aa'|^2>` summed over the grid; the diagonal is left at zero.
    pub measured: Vec<Vec<f64>>,
    /// `T_a T_a' / sum T` summed over the grid.
    pub predicted: Vec<Vec<f64>>,
    pub max_rel_deviation: f64,
    pub worst_pair: [usize; 2],
    pub mean_ratio: f64,
    pub tolerance: f64,
    pub passes: bool,
}

impl FactorizationReport {
    /// Measured over predicted for one off-diagonal pair.
    pub fn ratio(&self, a: usize, ap: usize) -> f64 {
        self.measured[a][ap] / self.predicted[a][ap]
    }
}

/// Backscattering of space 1 alone (transition space closed): off-diagonal
/// `<|S1_aa'|^2>` against `T_a T_a' / sum T`, each pooled over `energies`.
/// `H1` and the channel matrix are redrawn for every realization.
pub fn factorization_check(
    model: &ModelConfig,
    n_realizations: usize,
    energies: &[f64],
    master_seed: u64,
    workers: usize,
) -> Result<FactorizationReport> {
    model.validate()?;
    if n_realizations < 2 || energies.is_empty() {
        return Err(Error::InvalidArgument("need two realizations and one energy".into()));
    }
    let (n, l, n_e) = (model.n_dim, model.channel_strengths_1.len(), energies.len());
    let mut s_sum = vec![C64::new(0.0, 0.0); n_e * l];
    let mut p_sum = vec![0.0; n_e * l * l];
    let mut accumulated = 0usize;
    let skipped = for_each_realization(
        n_realizations,
        workers,
        |r| {
            let mut rng = realization_rng(master_seed, r as u64);
            let h1 = sample_goe(n, model.lambda, &mut rng);
            let w1 = sample_channel_matrix(n, &model.channel_strengths_1, &mut rng)?;
            let scatterer = KMatrixScatterer::new(h1.matrix.as_ref(), w1.rows.as_ref())?;
            energies
                .iter()
                .map(|&e| scatterer.s_matrix(e))
                .collect::<Result<Vec<_>>>()
        },
        |_, matrices| {
            for (e, s) in matrices.iter().enumerate() {
                for a in 0..l {
                    s_sum[e * l + a] += s[(a, a)];
                    for ap in 0..l {
                        p_sum[(e * l + a) * l + ap] += s[(a, ap)].norm_sqr();
                    }
                }
            }
            accumulated += 1;
        },
    )?;
    let nf = accumulated as f64;
    let mut measured = vec![vec![0.0; l]; l];
    let mut predicted = vec![vec![0.0; l]; l];
    let mut t_mean = vec![0.0; l];
    for e in 0..n_e {
        let avg: Vec<C64> = (0..l).map(|a| s_sum[e * l + a] / nf).collect();
        let t = transmission_from_average(&avg);
        for a in 0..l {
            t_mean[a] += t.t_values[a] / n_e as f64;
            for ap in 0..l {
                if a != ap {
                    measured[a][ap] += p_sum[(e * l + a) * l + ap] / nf;
                    predicted[a][ap] += t.t_values[a] * t.t_values[ap] / t.sum_t;
                }
            }
        }
    }
    let mut report = FactorizationReport {
        n_realizations: accumulated,
        skipped,
        energies: energies.to_vec(),
        t_mean,
        measured,
        predicted,
        max_rel_deviation: 0.0,
        worst_pair: [0, 0],
        mean_ratio: 0.0,
        tolerance: FACTORIZATION_TOL,
        passes: false,
    };
    let mut ratio_sum = 0.0;
    for a in 0..l {
        for ap in 0..l {
            if a == ap {
                continue;
            }
            let ratio = report.ratio(a, ap);
            ratio_sum += ratio;
            let dev = (ratio - 1.0).abs();
            if !(dev <= report.max_rel_deviation) {
                report.max_rel_deviation = dev;
                report.worst_pair = [a, ap];
            }
        }
    }
    if l > 1 {
        report.mean_ratio = ratio_sum / (l * (l - 1)) as f64;
    }
    report.passes = l > 1 && report.max_rel_deviation < FACTORIZATION_TOL;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct GreenCenterReport {
    pub lambda: f64,
    pub n_realizations: usize,
    /// Mean diagonal element of `G1(0)` as `[re, im]`.
    pub diag_mean: [f64; 2],
    pub diag_std_error: f64,
    /// `|<G1_mumu(0)> + i / lambda|`.
    pub deviation: f64,
    /// `GREEN_CENTER_TOL / lambda`.
    pub tolerance: f64,
    /// Mean off-diagonal element.
    pub offdiag_mean: [f64; 2],
    pub offdiag_std_error: f64,
    pub passes: bool,
}

/// Average of `G1(0) = (-H1 + i Gamma1 / 2)^{-1}` over realizations of `H1` and
/// of the space-1 channel matrix.
pub fn green_center_check(
    model: &ModelConfig,
    n_realizations: usize,
    master_seed: u64,
    workers: usize,
) -> Result<GreenCenterReport> {
    model.validate()?;
    if n_realizations < 2 {
        return Err(Error::InvalidArgument("need at least two realizations".into()));
    }
    let n = model.n_dim;
    let blocking = Blocking::new(n_realizations);
    let mut parts: Vec<BlockSums> = (0..4).map(|_| BlockSums::new(blocking.n_blocks)).collect();
    for_each_realization(
        n_realizations,
        workers,
        |r| {
            let mut rng = realization_rng(master_seed, r as u64);
            let h1 = sample_goe(n, model.lambda, &mut rng);
            let w1 = sample_channel_matrix(n, &model.channel_strengths_1, &mut rng)?;
            let gamma = width_matrix(&w1).gamma;
            let d = Mat::from_fn(n, n, |i, j| C64::new(-h1.matrix[(i, j)], 0.5 * gamma[(i, j)]));
            let (g, residual) = linalg::solve_checked(d.as_ref(), linalg::identity_c(n).as_ref());
            if residual > SOLVE_RESIDUAL_TOL {
                return Err(Error::SingularPropagator { energy: 0.0, residual });
            }
            let mut diag = C64::new(0.0, 0.0);
            let mut all = C64::new(0.0, 0.0);
            for j in 0..n {
                for i in 0..n {
                    all += g[(i, j)];
                }
                diag += g[(j, j)];
            }
            let off = if n > 1 {
                (all - diag) / (n * (n - 1)) as f64
            } else {
                C64::new(0.0, 0.0)
            };
            Ok([diag.re / n as f64, diag.im / n as f64, off.re, off.im])
        },
        |r, values| {
            let g = blocking.block_of(r);
            for (part, v) in parts.iter_mut().zip(values) {
                part.push(g, v);
            }
        },
    )?;
    let est: Vec<Estimate> = parts.iter().map(BlockSums::estimate).collect();
    let diag_mean = [est[0].mean, est[1].mean];
    let deviation = C64::new(diag_mean[0], diag_mean[1] + 1.0 / model.lambda).norm();
    let tolerance = GREEN_CENTER_TOL / model.lambda;
    let offdiag_mean = [est[2].mean, est[3].mean];
    let offdiag_std_error = est[2].std_error.hypot(est[3].std_error);
    let off_ok = offdiag_mean[0].hypot(offdiag_mean[1]) < 3.0 * offdiag_std_error;
    Ok(GreenCenterReport {
        lambda: model.lambda,
        n_realizations: parts[0].total(),
        diag_mean,
        diag_std_error: est[0].std_error.hypot(est[1].std_error),
        deviation,
        tolerance,
        offdiag_mean,
        offdiag_std_error,
        passes: deviation < tolerance && off_ok,
    })
}

/// Worst defects of the exact single-realization identities.
#[derive(Debug, Clone, Serialize)]
pub struct ExactnessReport {
    pub n_realizations: usize,
    pub energies: Vec<f64>,
    /// `max |S^dagger S - 1|`.
    pub unitarity: f64,
    /// `max |S - S^T|`.
    pub symmetry: f64,
    /// Resummed `S_ab` against the block of the direct solve.
    pub resummed: f64,
    /// Eigenbasis (K-matrix) evaluation against the direct solve.
    pub k_matrix: f64,
    /// Decomposition of `V1`, `V2`: reconstruction residual and singular value error.
    pub round_trip: f64,
    /// Relative spread of `Y` between the propagator, resonance and split forms.
    pub transport_identity: f64,
    /// `|sum gamma_l - sum |z|^2|`, relative.
    pub width_sum_rule: f64,
    pub passes: bool,
}

/// Checks unitarity, symmetry and the equivalence of the three S-matrix
/// routes on `n_realizations` draws, then the analytic identities of the
/// transition-space problem.
pub fn exactness_check(cfg: &EnsembleConfig, n_realizations: usize, energies: &[f64]) -> Result<ExactnessReport> {
    let template = ModelTemplate::new(&cfg.model)?;
    let mut report = ExactnessReport {
        n_realizations,
        energies: energies.to_vec(),
        unitarity: 0.0,
        symmetry: 0.0,
        resummed: 0.0,
        k_matrix: 0.0,
        round_trip: 0.0,
        transport_identity: 0.0,
        width_sum_rule: 0.0,
        passes: false,
    };
    let worst = |acc: &mut f64, x: f64| {
        if !(x <= *acc) {
            *acc = x;
        }
    };
    for r in 0..n_realizations {
        let mut rng = realization_rng(cfg.master_seed, r as u64);
        let model = template.sample(cfg.resample_frames, &mut rng)?;
        let fast = KMatrixScatterer::full(&model)?;
        for block in [&model.v1, &model.v2] {
            let dec = decompose_coupling(block.v_matrix.as_ref())?;
            let mut expected = block.singular_values.clone();
            expected.sort_by(|a, b| b.total_cmp(a));
            let scale = expected.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
            let sv_err = dec
                .block
                .singular_values
                .iter()
                .zip(&expected)
                .map(|(a, b)| (a - b).abs() / scale)
                .fold(0.0f64, f64::max);
            worst(&mut report.round_trip, dec.residual.max(sv_err));
        }
        for &energy in energies {
            let direct = s_matrix_direct(&model, energy)?;
            worst(&mut report.unitarity, direct.unitarity_defect());
            worst(&mut report.symmetry, direct.symmetry_defect());
            let resummed = s_ab_resummed(&model, energy)?;
            worst(
                &mut report.resummed,
                linalg::max_abs_diff_c(resummed.as_ref(), direct.s_ab()),
            );
            let k = fast.s_matrix(energy)?;
            worst(
                &mut report.k_matrix,
                linalg::max_abs_diff_c(k.as_ref(), direct.s.as_ref()),
            );
        }
    }

    let h = effective_hamiltonian(template.htr.as_ref(), template.z1().as_ref(), template.z2().as_ref())?;
    let res = ResonanceSet::new(&h)?;
    for &energy in energies {
        let direct = transport_factor_direct(
            template.htr.as_ref(),
            template.z1().as_ref(),
            template.z2().as_ref(),
            energy,
        )?;
        let resonant = transport_factor_resonant(&res, energy);
        let split = interference_decomposition(&res, energy).total();
        let scale = direct.abs().max(f64::MIN_POSITIVE);
        worst(
            &mut report.transport_identity,
            (direct - resonant).abs().max((split - resonant).abs()) / scale,
        );
    }
    let coupling = h.total_coupling();
    let widths: f64 = res.widths().iter().sum();
    report.width_sum_rule = (widths - coupling).abs() / coupling.max(f64::MIN_POSITIVE);

    report.passes = report.unitarity < UNITARITY_TOL
        && report.symmetry < UNITARITY_TOL
        && report.resummed < IDENTITY_TOL
        && report.k_matrix < IDENTITY_TOL
        && report.round_trip < ROUND_TRIP_TOL
        && report.transport_identity < IDENTITY_TOL
        && report.width_sum_rule < IDENTITY_TOL;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HtrSpec, Preset};
    use rand::RngExt;

    fn small(n_dim: usize) -> ModelConfig {
        ModelConfig::preset_with(Preset::Isolated, n_dim, 2, 1.0, 3, 2)
    }

    #[test]
    fn exactness_on_a_small_model() {
        let cfg = EnsembleConfig::new(ModelConfig::preset_with(Preset::Overlapping, 30, 3, 1.0, 4, 3));
        let report = exactness_check(&cfg, 2, &[-0.1, 0.0, 0.02]).unwrap();
        assert!(report.passes, "{report:?}");
    }

    #[test]
    fn streams_are_independent_and_replayable() {
        let x: f64 = realization_rng(7, 3).random();
        let y: f64 = realization_rng(7, 3).random();
        let z: f64 = realization_rng(7, 4).random();
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn grid_examples() {
        assert_eq!(energy_grid(-1.0, 1.0, 3), vec![-1.0, 0.0, 1.0]);
        assert_eq!(energy_grid(0.5, 1.0, 1), vec![0.5]);
        let g = energy_grid(-0.2, 0.2, 41);
        assert_eq!(g.len(), 41);
        assert!(g[20].abs() < 1e-17);
    }

    #[test]
    fn config_validation() {
        let mut cfg = EnsembleConfig::new(small(20));
        assert!(cfg.validate().is_ok());
        cfg.n_realizations = 1;
        cfg.energy_grid = vec![0.1, 0.0, 0.7];
        let Err(Error::Validation(errors)) = cfg.validate() else {
            panic!()
        };
        assert_eq!(errors.len(), 3, "{errors:?}");
    }

    #[test]
    fn curve_shapes_and_bounds() {
        let mut cfg = EnsembleConfig::new(small(20));
        cfg.n_realizations = 6;
        cfg.energy_grid = energy_grid(-0.1, 0.1, 3);
        let curve = run_ensemble(&cfg).unwrap();
        assert_eq!(curve.n_realizations, 6);
        assert_eq!(curve.points.len(), 3);
        for p in &curve.points {
            assert_eq!(p.p_mc.len(), 6);
            assert!(p
                .p_mc
                .iter()
                .all(|e| e.mean >= 0.0 && e.mean <= 1.0 && e.std_error >= 0.0));
            assert!(p.p_analytic.iter().all(|&x| x >= 0.0));
            assert!((p.y - p.y_isolated - p.y_cross).abs() < 1e-12);
            let total: f64 = (0..2).map(|b| p.p_analytic[curve.pair_index(1, b)]).sum();
            assert!((total - p.total_analytic[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut cfg = EnsembleConfig::new(small(16));
        cfg.n_realizations = 9;
        cfg.energy_grid = vec![0.0, 0.05];
        let one = serde_json::to_string(&run_ensemble(&cfg).unwrap()).unwrap();
        cfg.worker_hint = 3;
        let three = serde_json::to_string(&run_ensemble(&cfg).unwrap()).unwrap();
        assert_eq!(one, three);
    }

    #[test]
    fn decoupled_spaces_do_not_transmit() {
        let mut model = small(20);
        model.sv_1 = vec![0.0; 2];
        model.sv_2 = vec![0.0; 2];
        model.htr_spec = HtrSpec::Eigenvalues(vec![0.0, 0.03]);
        let mut cfg = EnsembleConfig::new(model);
        cfg.n_realizations = 4;
        cfg.energy_grid = vec![-0.05, 0.0, 0.03];
        let curve = run_ensemble(&cfg).unwrap();
        for p in &curve.points {
            assert!(p.p_mc.iter().all(|e| e.mean < 1e-20));
            assert!(p.p_analytic.iter().all(|&x| x == 0.0));
        }
        let report = vanishing_amplitude_check(&curve);
        assert!(!report.applicable && report.passes);
    }

    #[test]
    fn skips_are_counted_and_limited() {
        let skipped = for_each_realization(
            200,
            1,
            |r| if r == 5 { Err(Error::EigenSolver) } else { Ok(r) },
            |_, _| {},
        );
        assert_eq!(skipped.unwrap(), 1);
        let too_many = for_each_realization(
            100,
            2,
            |r| if r < 2 { Err(Error::EigenSolver) } else { Ok(r) },
            |_, _| {},
        );
        assert_eq!(too_many.unwrap_err(), Error::TooManySkipped { skipped: 2, total: 100 });
    }

    #[test]
    fn consume_order_is_realization_order() {
        let mut seen = Vec::new();
        for_each_realization(23, 4, |r| Ok(r * 2), |r, v| seen.push((r, v))).unwrap();
        assert_eq!(seen, (0..23).map(|r| (r, 2 * r)).collect::<Vec<_>>());
    }
}
