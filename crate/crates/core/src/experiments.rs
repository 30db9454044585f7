//! Perturbation-magnitude study, the 1-D separability runs, and the
//! architecture comparison.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, Mode, Network, NetworkConfig, Readout};
use crate::autodiff::Activation;
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::{self, TrainConfig};

/// Mean perturbation ratio `|f(x) dl| / |x|` at one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub layer: usize,
    pub rho: f64,
    /// Samples skipped because `|x| = 0`.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub records: Vec<PerturbationRecord>,
    /// Mean of the per-layer ratios.
    pub mean_rho: f64,
    pub excluded: usize,
}

/// Per-sample ratios `|f_i dl| / |x_i|` for `B x d` activations and forcing
/// outputs, averaged over samples with nonzero `x_i`.
pub fn perturbation_ratio(x: &Tensor, forcing: &Tensor, dl: f64) -> Result<(f64, usize)> {
    if x.shape() != forcing.shape() || x.shape().len() != 2 {
        return Err(Error::Dimension {
            op: "perturbation ratio",
            left: x.shape().to_vec(),
            right: forcing.shape().to_vec(),
        });
    }
    let (mut sum, mut used, mut excluded) = (0.0, 0usize, 0usize);
    for i in 0..x.rows() {
        let nx = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 {
            excluded += 1;
            continue;
        }
        let nf = forcing.row(i).iter().map(|v| v * v).sum::<f64>().sqrt() * dl;
        sum += nf / nx;
        used += 1;
    }
    let mean = if used == 0 { 0.0 } else { sum / used as f64 };
    Ok((mean, excluded))
}

/// Per-layer perturbation ratios of a residual network on `batch`.
pub fn measure_perturbation(net: &Network, batch: &Tensor) -> Result<PerturbationReport> {
    if net.config().architecture != Architecture::Smooth(1) {
        return Err(Error::contract(format!(
            "perturbation study needs a residual (C1) network, got {}",
            net.config().architecture
        )));
    }
    if net.config().depth == 0 {
        return Err(Error::contract("perturbation study needs at least one block"));
    }
    let traj = net.trajectory(batch, Mode::Direct)?;
    let dl = net.config().dl;
    let mut records = Vec::with_capacity(traj.forcing.len());
    for (layer, (state, f)) in traj.states.iter().zip(&traj.forcing).enumerate() {
        let (rho, excluded) = perturbation_ratio(state.position(), f, dl)?;
        records.push(PerturbationRecord { layer, rho, excluded });
    }
    let excluded = records.iter().map(|r| r.excluded).sum();
    if excluded > 0 {
        warn!("{excluded} zero-norm activations excluded from the perturbation mean");
    }
    let mean_rho = records.iter().map(|r| r.rho).sum::<f64>() / records.len() as f64;
    Ok(PerturbationReport {
        records,
        mean_rho,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Computational distance `1 / slope`, when the slope is positive.
    pub d_estimate: Option<f64>,
}

/// Least squares of `1 / rho` against `L`.
pub fn fit_computational_distance(pairs: &[(usize, f64)]) -> Result<RegressionFit> {
    let mut distinct: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::contract(format!("need at least 3 distinct depths, got {}", distinct.len())));
    }
    if let Some(&(l, r)) = pairs.iter().find(|p| !(p.1 > 0.0 && p.1.is_finite())) {
        return Err(Error::contract(format!("mean ratio at L = {l} must be positive, got {r}")));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| 1.0 / p.1).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if slope.abs() * sxx.sqrt() <= 1e-12 * scale {
        return Err(Error::contract("1/rho does not vary with depth; no finite computational distance"));
    }
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(RegressionFit {
        slope,
        intercept,
        r_squared,
        d_estimate: (slope > 0.0).then(|| 1.0 / slope),
    })
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation, ties given their average rank.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::contract("spearman needs two equal-length series of length >= 2"));
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::contract("spearman of a constant series is undefined"));
    }
    Ok(cov / (vx * vy).sqrt())
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j.max(1));
    }
    b.build().map_err(|e| Error::contract(format!("thread pool: {e}")))
}

/// Phase-space positions `(q1, q2)` of every probe sample at every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDump {
    /// `layers[l][i] = (q1, q2)` for sample `i`.
    pub layers: Vec<Vec<(f64, f64)>>,
    pub labels: Vec<usize>,
}

impl TrajectoryDump {
    /// Records a single-node network; `q2 = 0` when the order is 1.
    pub fn capture(net: &Network, ds: &Dataset) -> Result<Self> {
        if net.config().width != 1 {
            return Err(Error::contract("phase-space dumps need width 1"));
        }
        let traj = net.trajectory(ds.inputs(), Mode::Direct)?;
        let layers = traj
            .states
            .iter()
            .map(|s| {
                let q1 = s.parts()[0].data();
                match s.parts().get(1) {
                    Some(q2) => q1.iter().copied().zip(q2.data().iter().copied()).collect(),
                    None => q1.iter().map(|&v| (v, 0.0)).collect(),
                }
            })
            .collect();
        Ok(Self {
            layers,
            labels: ds.labels().to_vec(),
        })
    }

    pub fn final_positions(&self) -> Vec<f64> {
        self.layers.last().map(|l| l.iter().map(|p| p.0).collect()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub depth: usize,
    pub n_per_segment: usize,
    pub data_seed: u64,
    pub seeds: Vec<u64>,
    pub dl: f64,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            depth: 16,
            n_per_segment: 25,
            data_seed: 0,
            seeds: (1..=5).collect(),
            dl: 0.0625,
            activation: Activation::Tanh,
            epochs: 2000,
            batch_size: 100,
            lr: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyRun {
    pub seed: u64,
    pub k: usize,
    pub accuracy: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyResult {
    pub k: usize,
    pub runs: Vec<ToyRun>,
    /// Phase-space dump of the most accurate run (first on ties).
    pub best: TrajectoryDump,
}

impl ToyResult {
    pub fn best_accuracy(&self) -> f64 {
        self.runs.iter().map(|r| r.accuracy).fold(0.0, f64::max)
    }

    pub fn worst_accuracy(&self) -> f64 {
        self.runs.iter().map(|r| r.accuracy).fold(1.0, f64::min)
    }
}

fn toy_network(k: usize, cfg: &ToyConfig, seed: u64) -> Result<Network> {
    let nc = NetworkConfig::new(Architecture::Smooth(k), cfg.depth, 1, 1, 2)
        .with_dl(cfg.dl)
        .with_activation(cfg.activation)
        .with_readout(Readout::Position)
        .with_seed(seed);
    Network::new(nc)
}

/// Trains a single-node `C^k` network per seed on the toy set and reports
/// full-train accuracy.
pub fn run_toy_experiment(k: usize, cfg: &ToyConfig, jobs: Option<usize>) -> Result<ToyResult> {
    if cfg.seeds.is_empty() {
        return Err(Error::contract("toy experiment needs at least one seed"));
    }
    let ds = data::generate_toy_1d(cfg.n_per_segment, cfg.data_seed)?;
    let outcomes = pool(jobs)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let mut net = toy_network(k, cfg, seed)?;
                let mut tc = TrainConfig::new(cfg.epochs, cfg.batch_size, cfg.lr, seed);
                tc.stop_at_accuracy = Some(1.0);
                let log = train::train(&mut net, &ds, None, &tc)?;
                let accuracy = train::evaluate(&net, &ds, Mode::Direct)?.accuracy;
                info!("toy k={k} seed={seed}: accuracy {accuracy:.4} after {} epochs", log.epochs.len());
                Ok((
                    ToyRun {
                        seed,
                        k,
                        accuracy,
                        epochs_run: log.epochs.len(),
                    },
                    net,
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let best = outcomes
        .iter()
        .enumerate()
        .fold(0, |b, (i, o)| if o.0.accuracy > outcomes[b].0.accuracy { i } else { b });
    let dump = TrajectoryDump::capture(&outcomes[best].1, &ds)?;
    Ok(ToyResult {
        k,
        runs: outcomes.into_iter().map(|o| o.0).collect(),
        best: dump,
    })
}

/// Training setup shared by the MNIST studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistConfig {
    pub width: usize,
    pub dl: f64,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub train_fraction: f64,
    /// Training rows used to measure perturbation ratios.
    pub probe_size: usize,
}

impl Default for MnistConfig {
    fn default() -> Self {
        Self {
            width: 64,
            dl: 1.0,
            activation: Activation::Tanh,
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            train_fraction: 0.8,
            probe_size: 1000,
        }
    }
}

impl MnistConfig {
    /// Depth-sweep defaults: unit mesh, sigmoid forcing.
    pub fn depth_sweep() -> Self {
        Self {
            activation: Activation::Sigmoid,
            ..Self::default()
        }
    }

    /// Comparison defaults: tanh forcing, mesh [`COMPARE_DL`].
    pub fn comparison() -> Self {
        Self {
            dl: COMPARE_DL,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub depth: usize,
    pub mean_rho: f64,
    /// Largest per-layer ratio.
    pub max_rho: f64,
    pub val_acc: f64,
}

impl DepthPoint {
    pub fn inv_rho(&self) -> f64 {
        1.0 / self.mean_rho
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSweep {
    pub points: Vec<DepthPoint>,
    pub fit: RegressionFit,
    pub spearman: f64,
}

fn train_mnist(arch: Architecture, depth: usize, cfg: &MnistConfig, train_set: &Dataset, val: &Dataset) -> Result<(Network, f64)> {
    let nc = NetworkConfig::new(arch, depth, cfg.width, train_set.input_dim(), train_set.num_classes())
        .with_dl(cfg.dl)
        .with_activation(cfg.activation)
        .with_seed(cfg.seed);
    let mut net = Network::new(nc)?;
    let tc = TrainConfig::new(cfg.epochs, cfg.batch_size, cfg.lr, cfg.seed);
    train::train(&mut net, train_set, None, &tc)?;
    let acc = train::evaluate(&net, val, Mode::Direct)?.accuracy;
    Ok((net, acc))
}

/// Trains a fresh residual network per depth and measures its mean
/// perturbation ratio on training rows.
pub fn run_depth_sweep(depths: &[usize], ds: &Dataset, cfg: &MnistConfig, jobs: Option<usize>) -> Result<DepthSweep> {
    let mut distinct = depths.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::contract(format!("depth sweep needs at least 3 distinct depths, got {}", distinct.len())));
    }
    if depths.contains(&0) {
        return Err(Error::contract("depth sweep depths must be >= 1"));
    }
    let (train_set, val) = data::split(ds, cfg.train_fraction, cfg.seed)?;
    let probe = train_set.take(cfg.probe_size)?;
    let points = pool(jobs)?.install(|| {
        depths
            .par_iter()
            .map(|&depth| {
                let (net, val_acc) = train_mnist(Architecture::Smooth(1), depth, cfg, &train_set, &val)?;
                let report = measure_perturbation(&net, probe.inputs())?;
                info!("depth {depth}: mean rho {:.4}, val acc {val_acc:.4}", report.mean_rho);
                Ok(DepthPoint {
                    depth,
                    mean_rho: report.mean_rho,
                    max_rho: report.records.iter().map(|r| r.rho).fold(0.0, f64::max),
                    val_acc,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let pairs: Vec<(usize, f64)> = points.iter().map(|p| (p.depth, p.mean_rho)).collect();
    let fit = fit_computational_distance(&pairs)?;
    let ls: Vec<f64> = points.iter().map(|p| p.depth as f64).collect();
    let rs: Vec<f64> = points.iter().map(|p| p.mean_rho).collect();
    Ok(DepthSweep {
        spearman: spearman(&ls, &rs)?,
        points,
        fit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub architecture: Architecture,
    pub accuracy: f64,
}

impl CompareRow {
    pub fn test_error(&self) -> f64 {
        1.0 - self.accuracy
    }
}

/// Depth and mesh size of the comparison runs.
pub const COMPARE_DEPTH: usize = 4;
pub const COMPARE_DL: f64 = 0.5;

/// The orders compared by default: `C^1..C^4` and dense `k = 2..4`.
pub fn default_comparison() -> Vec<Architecture> {
    (1..=4).map(Architecture::Smooth).chain((2..=4).map(Architecture::Dense)).collect()
}

/// Trains every architecture at `depth` with identical settings and reports
/// held-out accuracy.
pub fn compare_orders(
    archs: &[Architecture],
    depth: usize,
    ds: &Dataset,
    cfg: &MnistConfig,
    jobs: Option<usize>,
) -> Result<Vec<CompareRow>> {
    if archs.is_empty() {
        return Err(Error::contract("nothing to compare"));
    }
    let (train_set, val) = data::split(ds, cfg.train_fraction, cfg.seed)?;
    pool(jobs)?.install(|| {
        archs
            .par_iter()
            .map(|&architecture| {
                let (_, accuracy) = train_mnist(architecture, depth, cfg, &train_set, &val)?;
                info!("{architecture}: held-out accuracy {accuracy:.4}");
                Ok(CompareRow { architecture, accuracy })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_of_3_4_triangle() {
        let x = Tensor::new([1, 2], vec![3.0, 4.0]).unwrap();
        let f = Tensor::new([1, 2], vec![0.3, 0.4]).unwrap();
        let (rho, excluded) = perturbation_ratio(&x, &f, 1.0).unwrap();
        assert!((rho - 0.1).abs() < 1e-15);
        assert_eq!(excluded, 0);
    }

    #[test]
    fn zero_rows_are_excluded() {
        let x = Tensor::new([2, 1], vec![0.0, 2.0]).unwrap();
        let f = Tensor::new([2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(perturbation_ratio(&x, &f, 1.0).unwrap(), (0.5, 1));
    }

    #[test]
    fn exact_inverse_law() {
        let pairs: Vec<(usize, f64)> = (2..=20).step_by(2).map(|l| (l, 10.0 / l as f64)).collect();
        let fit = fit_computational_distance(&pairs).unwrap();
        assert!((fit.d_estimate.unwrap() - 10.0).abs() < 1e-10 * 10.0);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fits() {
        assert!(fit_computational_distance(&[(2, 0.5), (4, 0.5), (6, 0.5)]).is_err());
        assert!(fit_computational_distance(&[(2, 0.5), (4, 0.25)]).is_err());
        assert!(fit_computational_distance(&[(2, 0.5), (4, 0.0), (6, 0.1)]).is_err());
    }

    #[test]
    fn spearman_monotone_and_ties() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[9.0, 5.0, 1.0]).unwrap(), -1.0);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
        assert!(spearman(&[1.0, 2.0], &[3.0, 3.0]).is_err());
    }
}
