//! Stroboscopic driver: the kicked Ising protocol interleaved with the
//! delayed-feedback dissipation, measured at period boundaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comb::{Bond, CombMps, Side, TruncationPolicy};
use crate::error::{Error, Result};
use crate::model::{sample_disorder, DisorderRealization, GateSet, ModelParams};
use crate::tensor::DenseTensor;

/// What happens to bins that have left the feedback window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DeadBinPolicy {
    /// Keep every bin (memory grows linearly with time).
    Keep,
    /// Drop dead bins only once they have factored off within `tol`.
    Prune { tol: f64 },
    /// Drop dead bins as soon as they leave the window. Exact: they are
    /// isometries onto the dangling environment leg.
    Fold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub periods: usize,
    /// Periods between stroboscopic records.
    pub measure_every: usize,
    /// Record after every time step instead of stroboscopically.
    #[serde(default)]
    pub measure_every_step: bool,
    #[serde(default)]
    pub record_bonds: bool,
    #[serde(default)]
    pub record_entropy: bool,
    #[serde(default = "default_dead_bins")]
    pub dead_bins: DeadBinPolicy,
}

fn default_dead_bins() -> DeadBinPolicy {
    DeadBinPolicy::Fold
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            periods: 100,
            measure_every: 1,
            measure_every_step: false,
            record_bonds: false,
            record_entropy: false,
            dead_bins: DeadBinPolicy::Fold,
        }
    }
}

impl RunConfig {
    pub fn periods(periods: usize) -> Self {
        Self {
            periods,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.periods == 0 {
            return Err(Error::InvalidParameter("periods must be at least 1".into()));
        }
        if self.measure_every == 0 {
            return Err(Error::InvalidParameter("measure_every must be at least 1".into()));
        }
        if let DeadBinPolicy::Prune { tol } = self.dead_bins {
            if !(0.0..1.0).contains(&tol) {
                return Err(Error::InvalidParameter(format!("prune tolerance {tol} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Record of one run. Index 0 is the initial state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MagnetizationSeries {
    /// Time in units of the period.
    pub periods: Vec<f64>,
    pub times: Vec<f64>,
    pub m_values: Vec<f64>,
    pub sz_profiles: Vec<Vec<f64>>,
    /// Cumulative discarded weight.
    pub norm_error: Vec<f64>,
    pub max_bond: Vec<usize>,
    /// Spine bond dimensions, when requested.
    pub bond_dims: Vec<Vec<usize>>,
    /// Entropy across every spine bond, when requested.
    pub entropies: Vec<Vec<f64>>,
}

impl MagnetizationSeries {
    pub fn len(&self) -> usize {
        self.m_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_values.is_empty()
    }

    pub fn push(&mut self, period: f64, time: f64, sz: Vec<f64>, norm_error: f64, max_bond: usize) {
        self.periods.push(period);
        self.times.push(time);
        self.m_values.push(staggered_magnetization(&sz));
        self.sz_profiles.push(sz);
        self.norm_error.push(norm_error);
        self.max_bond.push(max_bond);
    }

    /// Value at an integer period, if it was recorded.
    pub fn m_at(&self, period: usize) -> Option<f64> {
        self.periods
            .iter()
            .position(|&p| (p - period as f64).abs() < 1e-9)
            .map(|k| self.m_values[k])
    }
}

/// `(1/N) sum_i (-1)^i <sigma^z_i>` with site 0 counted positive.
pub fn staggered_magnetization(sz: &[f64]) -> f64 {
    if sz.is_empty() {
        return 0.0;
    }
    let s: f64 = sz
        .iter()
        .enumerate()
        .map(|(i, v)| if i % 2 == 0 { *v } else { -*v })
        .sum();
    s / sz.len() as f64
}

pub(crate) fn check_grids(a: &MagnetizationSeries, b: &MagnetizationSeries) -> Result<()> {
    let same = a.periods.len() == b.periods.len()
        && a.periods.iter().zip(&b.periods).all(|(x, y)| (x - y).abs() < 1e-9);
    if !same {
        return Err(Error::Contract(format!(
            "series grids differ ({} vs {} points)",
            a.periods.len(),
            b.periods.len()
        )));
    }
    Ok(())
}

/// `|a.m - b.m|` pointwise.
pub fn deviation_trace(a: &MagnetizationSeries, b: &MagnetizationSeries) -> Result<Vec<f64>> {
    check_grids(a, b)?;
    Ok(a.m_values.iter().zip(&b.m_values).map(|(x, y)| (x - y).abs()).collect())
}

/// Owns the comb state and the prebuilt gates of one run.
pub struct FloquetStepper {
    params: ModelParams,
    gates: GateSet,
    state: CombMps,
    policy: TruncationPolicy,
    dead_bins: DeadBinPolicy,
    steps: u64,
}

impl FloquetStepper {
    pub fn new(p: &ModelParams, d: &DisorderRealization, dead_bins: DeadBinPolicy) -> Result<Self> {
        p.validate()?;
        Ok(Self {
            params: p.clone(),
            gates: GateSet::build(p, d)?,
            state: CombMps::init_neel_vacuum(p),
            policy: TruncationPolicy::from_params(p),
            dead_bins,
            steps: 0,
        })
    }

    pub fn state(&self) -> &CombMps {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut CombMps {
        &mut self.state
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.params.dt
    }

    /// One time step of the first half period: kick slice, then dissipation.
    pub fn kick_step(&mut self) -> Result<()> {
        for i in 0..self.params.n_sites {
            self.state.apply_single(i, &self.gates.kick_slice);
        }
        self.dissipate()?;
        self.steps += 1;
        Ok(())
    }

    /// One time step of the second half period: symmetric Ising slice, then
    /// dissipation.
    pub fn ising_step(&mut self) -> Result<()> {
        let n = self.params.n_sites;
        let even: Vec<usize> = (0..n.saturating_sub(1)).step_by(2).collect();
        let odd: Vec<usize> = (1..n.saturating_sub(1)).step_by(2).collect();
        self.apply_fields();
        // bonds inside a layer commute, so each layer is swept from
        // whichever end the center is nearest to
        let half = std::mem::take(&mut self.gates.ising.half_bonds);
        let full = std::mem::take(&mut self.gates.ising.bonds);
        self.apply_layer(&even, &half);
        self.apply_layer(&odd, &full);
        self.apply_layer(&even, &half);
        self.gates.ising.half_bonds = half;
        self.gates.ising.bonds = full;
        self.apply_fields();
        self.dissipate()?;
        self.steps += 1;
        Ok(())
    }

    fn apply_fields(&mut self) {
        for i in 0..self.params.n_sites {
            self.state.apply_single(i, &self.gates.ising.half_fields[i]);
        }
    }

    fn center_site(&self) -> usize {
        match self.state.center() {
            crate::comb::Center::Spine(i) | crate::comb::Center::Arm { site: i, .. } => i,
        }
    }

    fn apply_layer(&mut self, bonds: &[usize], gates: &[DenseTensor]) {
        if self.center_site() <= self.params.n_sites / 2 {
            for &b in bonds {
                self.state.apply_pair(b, &gates[b], &self.policy, Side::Right);
            }
        } else {
            for &b in bonds.iter().rev() {
                self.state.apply_pair(b, &gates[b], &self.policy, Side::Left);
            }
        }
    }

    fn dissipate(&mut self) -> Result<()> {
        if self.params.is_closed() {
            return Ok(());
        }
        let n = self.params.n_sites;
        let l = self.params.bins_per_delay;
        let order: Vec<usize> = if self.center_site() <= n / 2 {
            (0..n).collect()
        } else {
            (0..n).rev().collect()
        };
        for site in order {
            self.state.move_center(crate::comb::Center::Spine(site));
            self.state.append_bin(site);
            if self.params.is_markovian() {
                self.state.apply_emission_gate(site, &self.gates.emission, &self.policy)?;
            } else {
                self.state.swap_feedback_bin(site, l, &self.policy)?;
                self.state.apply_feedback_gate(site, &self.gates.feedback[site], &self.policy)?;
                self.state.unswap_feedback_bin(site, l, &self.policy)?;
            }
            match self.dead_bins {
                DeadBinPolicy::Keep => {}
                DeadBinPolicy::Fold => {
                    self.state.retire_dead_bins(site);
                }
                DeadBinPolicy::Prune { tol } => {
                    self.state.prune_dead_bins(tol);
                }
            }
        }
        Ok(())
    }

    /// One full period.
    pub fn period(&mut self) -> Result<()> {
        let steps = self.params.steps_per_half()?;
        for _ in 0..steps {
            self.kick_step()?;
        }
        for _ in 0..steps {
            self.ising_step()?;
        }
        Ok(())
    }

    fn record(&mut self, series: &mut MagnetizationSeries, rc: &RunConfig) -> Result<()> {
        let norm = self.state.norm_sqr();
        let budget = 1e-8 + 10.0 * self.state.accumulated_truncation();
        if !norm.is_finite() || (1.0 - norm).abs() > budget {
            return Err(Error::Numerical(format!(
                "norm drifted to {norm} at t = {} (budget {budget:e})",
                self.time()
            )));
        }
        let sz = self.state.sz_profile();
        let t = self.time();
        series.push(
            t / self.params.period,
            t,
            sz,
            self.state.accumulated_truncation(),
            self.state.max_bond(),
        );
        if rc.record_bonds {
            series.bond_dims.push(self.state.spine_bond_dims());
        }
        if rc.record_entropy {
            let s = (0..self.params.n_sites - 1)
                .map(|b| self.state.bond_entropy(Bond::Spine(b)))
                .collect();
            series.entropies.push(s);
        }
        Ok(())
    }
}

/// Evolves the Néel state for `rc.periods` periods on the comb network.
pub fn run_floquet(p: &ModelParams, d: &DisorderRealization, rc: &RunConfig) -> Result<MagnetizationSeries> {
    rc.validate()?;
    let mut stepper = FloquetStepper::new(p, d, rc.dead_bins)?;
    let steps = p.steps_per_half()?;
    let mut series = MagnetizationSeries::default();
    stepper.record(&mut series, rc)?;
    for n in 1..=rc.periods {
        if rc.measure_every_step {
            for _ in 0..steps {
                stepper.kick_step()?;
                stepper.record(&mut series, rc)?;
            }
            for _ in 0..steps {
                stepper.ising_step()?;
                stepper.record(&mut series, rc)?;
            }
        } else {
            stepper.period()?;
            if n % rc.measure_every == 0 {
                stepper.record(&mut series, rc)?;
            }
        }
    }
    Ok(series)
}

/// Pointwise statistics over disorder realizations.
#[derive(Clone, Debug, PartialEq)]
pub struct AveragedSeries {
    pub periods: Vec<f64>,
    pub times: Vec<f64>,
    pub m_mean: Vec<f64>,
    /// Population standard deviation (zero for a single realization).
    pub m_std: Vec<f64>,
    /// Worst cumulative truncation over realizations.
    pub norm_error: Vec<f64>,
    pub max_bond: Vec<usize>,
    /// Realization-averaged `<sigma^z_i>`.
    pub sz_mean: Vec<Vec<f64>>,
    pub realizations: usize,
}

impl AveragedSeries {
    /// Combines runs in the order given. Summation order is fixed, so the
    /// result does not depend on how the runs were scheduled.
    pub fn from_runs(runs: &[MagnetizationSeries]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::InvalidParameter("need at least one realization".into()))?;
        for r in &runs[1..] {
            check_grids(first, r)?;
        }
        let k = runs.len() as f64;
        let points = first.len();
        let mut out = Self {
            periods: first.periods.clone(),
            times: first.times.clone(),
            m_mean: Vec::with_capacity(points),
            m_std: Vec::with_capacity(points),
            norm_error: Vec::with_capacity(points),
            max_bond: Vec::with_capacity(points),
            sz_mean: Vec::with_capacity(points),
            realizations: runs.len(),
        };
        for t in 0..points {
            let mean = runs.iter().map(|r| r.m_values[t]).sum::<f64>() / k;
            let var = runs.iter().map(|r| (r.m_values[t] - mean).powi(2)).sum::<f64>() / k;
            out.m_mean.push(mean);
            out.m_std.push(var.sqrt());
            out.norm_error.push(runs.iter().map(|r| r.norm_error[t]).fold(0.0, f64::max));
            out.max_bond.push(runs.iter().map(|r| r.max_bond[t]).max().unwrap_or(1));
            let n = first.sz_profiles[t].len();
            out.sz_mean.push(
                (0..n)
                    .map(|i| runs.iter().map(|r| r.sz_profiles[t][i]).sum::<f64>() / k)
                    .collect(),
            );
        }
        Ok(out)
    }
}

/// Runs `run` on realizations `0..n` in parallel and averages them.
pub fn average_over<F>(p: &ModelParams, n_realizations: usize, run: F) -> Result<AveragedSeries>
where
    F: Fn(&DisorderRealization) -> Result<MagnetizationSeries> + Sync,
{
    if n_realizations == 0 {
        return Err(Error::InvalidParameter("need at least one realization".into()));
    }
    let runs = (0..n_realizations as u64)
        .into_par_iter()
        .map(|k| run(&sample_disorder(p, k)))
        .collect::<Result<Vec<_>>>()?;
    AveragedSeries::from_runs(&runs)
}

/// Disorder average of [`run_floquet`] over realizations `0..n`.
pub fn disorder_average(p: &ModelParams, rc: &RunConfig, n_realizations: usize) -> Result<AveragedSeries> {
    average_over(p, n_realizations, |d| run_floquet(p, d, rc))
}
