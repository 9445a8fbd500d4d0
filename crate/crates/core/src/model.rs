//! Physical parameters, disorder sampling, and synthesis of every unitary the
//! time stepper applies.
//!
//! Units: the Ising scale `J^z` is the unit of energy and `1/J^z` the unit
//! of time. The drive frequency `Omega = pi / T` is always derived from the
//! period and never stored.
//!
//! Spin basis is `(|up>, |down>)` with `|up>` the excited state. Time bins
//! carry photon numbers `0..bin_dim`, and the noise increment acts as
//! `dB |m> = sqrt(m dt) |m-1>`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{expm_antihermitian, pauli, DenseTensor, C64, I, ONE, ZERO};

const UNITARY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub n_sites: usize,
    /// Drive period `T`.
    pub period: f64,
    /// Kick detuning from the perfect flip.
    pub epsilon: f64,
    /// Disorder half-widths.
    pub jz: f64,
    pub jx: f64,
    pub hx: f64,
    /// Coupling to the open side of the waveguide.
    pub gamma_l: f64,
    /// Coupling to the mirrored side; zero gives the memoryless limit.
    pub gamma_r: f64,
    /// Round-trip delay to the mirror.
    pub tau: f64,
    /// Feedback phase in radians, shared by all sites unless overridden.
    pub phi: f64,
    /// Optional per-site feedback phases.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_sites: Option<Vec<f64>>,
    pub dt: f64,
    /// Number of time steps per delay; `bins_per_delay * dt == tau`.
    pub bins_per_delay: usize,
    pub bin_dim: usize,
    pub max_bond: usize,
    pub cutoff: f64,
    pub seed: u64,
}

impl ModelParams {
    /// Parameters for `n_sites` spins with the reference regime: `J^z T =
    /// 0.05`, `J^x = h^x = 0.1`, `J^z tau = 2e-4`, `phi = pi`, one bin per
    /// delay, two-level bins, and no reservoir coupling.
    pub fn new(n_sites: usize) -> Self {
        Self {
            n_sites,
            period: 0.05,
            epsilon: 0.15,
            jz: 1.0,
            jx: 0.1,
            hx: 0.1,
            gamma_l: 0.0,
            gamma_r: 0.0,
            tau: 2e-4,
            phi: PI,
            phi_sites: None,
            dt: 2e-4,
            bins_per_delay: 1,
            bin_dim: 2,
            max_bond: 64,
            cutoff: 1e-12,
            seed: 20190725,
        }
    }

    /// Sets `Gamma_L = Gamma_R = gamma`.
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma_l = gamma;
        self.gamma_r = gamma;
        self
    }

    /// Sets the number of steps per delay and the matching time step.
    pub fn with_bins_per_delay(mut self, l: usize) -> Self {
        self.bins_per_delay = l;
        self.dt = self.tau / l as f64;
        self
    }

    pub fn omega(&self) -> f64 {
        PI / self.period
    }

    pub fn phi_at(&self, site: usize) -> f64 {
        self.phi_sites.as_ref().map_or(self.phi, |v| v[site])
    }

    /// True when the mirrored channel is absent and emitted photons never
    /// return.
    pub fn is_markovian(&self) -> bool {
        self.gamma_r == 0.0
    }

    pub fn is_closed(&self) -> bool {
        self.gamma_l == 0.0 && self.gamma_r == 0.0
    }

    /// Number of time steps in each half period.
    pub fn steps_per_half(&self) -> Result<usize> {
        let ratio = self.period / (2.0 * self.dt);
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "T/(2 dt) = {ratio} is not a positive integer (T = {}, dt = {})",
                self.period, self.dt
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_sites == 0 {
            return bad("n_sites must be positive".into());
        }
        if !(self.period > 0.0) {
            return bad(format!("period must be positive, got {}", self.period));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.bins_per_delay == 0 {
            return bad("bins_per_delay must be positive".into());
        }
        let product = self.bins_per_delay as f64 * self.dt;
        if (product - self.tau).abs() > 1e-12 * self.tau {
            return bad(format!(
                "bins_per_delay * dt = {} * {} = {product} differs from tau = {}",
                self.bins_per_delay, self.dt, self.tau
            ));
        }
        if self.bin_dim < 2 {
            return bad(format!("bin_dim must be at least 2, got {}", self.bin_dim));
        }
        if self.max_bond == 0 {
            return bad("max_bond must be positive".into());
        }
        if !(0.0..1.0).contains(&self.cutoff) {
            return bad(format!("cutoff must lie in [0, 1), got {}", self.cutoff));
        }
        for (name, v) in [("jz", self.jz), ("jx", self.jx), ("hx", self.hx)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} half-width must be non-negative, got {v}"));
            }
        }
        for (name, v) in [("gamma_l", self.gamma_l), ("gamma_r", self.gamma_r)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !self.epsilon.is_finite() || !self.phi.is_finite() {
            return bad("epsilon and phi must be finite".into());
        }
        if let Some(phis) = &self.phi_sites {
            if phis.len() != self.n_sites {
                return bad(format!("phi_sites has {} entries for {} sites", phis.len(), self.n_sites));
            }
        }
        self.steps_per_half()?;
        Ok(())
    }
}

/// One draw of the site-resolved couplings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub jz_bonds: Vec<f64>,
    pub jx_bonds: Vec<f64>,
    pub hx_fields: Vec<f64>,
}

impl DisorderRealization {
    /// Uniform couplings, used for clean tests.
    pub fn uniform(n_sites: usize, jz: f64, jx: f64, hx: f64) -> Self {
        let bonds = n_sites.saturating_sub(1);
        Self {
            jz_bonds: vec![jz; bonds],
            jx_bonds: vec![jx; bonds],
            hx_fields: vec![hx; n_sites],
        }
    }

    pub fn n_sites(&self) -> usize {
        self.hx_fields.len()
    }
}

/// Draws i.i.d. uniform couplings. Each realization index gets its own
/// ChaCha stream under the master seed, so a realization does not depend on
/// which others were drawn or in what order.
pub fn sample_disorder(p: &ModelParams, realization_index: u64) -> DisorderRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(realization_index);
    let mut draw = |w: f64| w * (2.0 * rng.gen::<f64>() - 1.0);
    let bonds = p.n_sites.saturating_sub(1);
    let jz_bonds = (0..bonds).map(|_| draw(p.jz)).collect();
    let jx_bonds = (0..bonds).map(|_| draw(p.jx)).collect();
    let hx_fields = (0..p.n_sites).map(|_| draw(p.hx)).collect();
    DisorderRealization {
        jz_bonds,
        jx_bonds,
        hx_fields,
    }
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// `exp(-i t H)` for a Hermitian `H`.
fn propagator(h: &DenseTensor, t: f64) -> Result<DenseTensor> {
    Ok(expm_antihermitian(&h.clone().scale(-I * t), UNITARY_TOL)?)
}

/// One time-step slice of the kick: `exp(-i dt (Omega - eps) sigma^x)`.
pub fn build_kick_slice(p: &ModelParams) -> Result<DenseTensor> {
    propagator(&pauli::x(), p.dt * (p.omega() - p.epsilon))
}

/// Ising propagators for one time step.
///
/// Bond `b` couples sites `b` and `b+1`; two-site gates use the factor order
/// `(site b, site b+1)`. Full-step and half-step versions are both kept:
/// the stepper applies the symmetric sequence
/// `F(dt/2) E(dt/2) O(dt) E(dt/2) F(dt/2)` (fields, even bonds, odd bonds).
#[derive(Clone, Debug)]
pub struct IsingSlices {
    pub bonds: Vec<DenseTensor>,
    pub half_bonds: Vec<DenseTensor>,
    pub fields: Vec<DenseTensor>,
    pub half_fields: Vec<DenseTensor>,
}

impl IsingSlices {
    /// The gate sequence of one symmetric step as `(sites, gate)` pairs, in
    /// application order.
    pub fn step_sequence(&self) -> Vec<(Vec<usize>, &DenseTensor)> {
        let n = self.fields.len();
        let fields = self.half_fields.iter().enumerate().map(|(i, g)| (vec![i], g));
        fn layer(n: usize, start: usize, gates: &[DenseTensor]) -> Vec<(Vec<usize>, &DenseTensor)> {
            (start..n.saturating_sub(1))
                .step_by(2)
                .map(|b| (vec![b, b + 1], &gates[b]))
                .collect()
        }
        let mut seq: Vec<(Vec<usize>, &DenseTensor)> = fields.clone().collect();
        seq.extend(layer(n, 0, &self.half_bonds));
        seq.extend(layer(n, 1, &self.bonds));
        seq.extend(layer(n, 0, &self.half_bonds));
        seq.extend(fields);
        seq
    }
}

fn bond_hamiltonian(jz: f64, jx: f64) -> DenseTensor {
    let zz = pauli::z().kron(&pauli::z()).scale(c(jz));
    let xx = pauli::x().kron(&pauli::x()).scale(c(jx));
    let mut h = zz;
    h.data_mut().iter_mut().zip(xx.data()).for_each(|(a, b)| *a += b);
    h
}

pub fn build_ising_slices(p: &ModelParams, d: &DisorderRealization) -> Result<IsingSlices> {
    if d.n_sites() != p.n_sites {
        return Err(Error::InvalidParameter(format!(
            "disorder realization has {} sites, model has {}",
            d.n_sites(),
            p.n_sites
        )));
    }
    let mut out = IsingSlices {
        bonds: Vec::new(),
        half_bonds: Vec::new(),
        fields: Vec::new(),
        half_fields: Vec::new(),
    };
    for (&jz, &jx) in d.jz_bonds.iter().zip(&d.jx_bonds) {
        let h = bond_hamiltonian(jz, jx);
        out.bonds.push(propagator(&h, p.dt)?);
        out.half_bonds.push(propagator(&h, 0.5 * p.dt)?);
    }
    for &hx in &d.hx_fields {
        let h = pauli::x().scale(c(hx));
        out.fields.push(propagator(&h, p.dt)?);
        out.half_fields.push(propagator(&h, 0.5 * p.dt)?);
    }
    Ok(out)
}

/// Truncated bin annihilator `dB` with `dB |m> = sqrt(m dt) |m-1>`.
pub fn noise_increment(bin_dim: usize, dt: f64) -> DenseTensor {
    let mut b = DenseTensor::zeros(&[bin_dim, bin_dim]);
    for m in 1..bin_dim {
        b.set(&[m - 1, m], c((m as f64 * dt).sqrt()));
    }
    b
}

/// Bin photon-number operator.
pub fn bin_number(bin_dim: usize) -> DenseTensor {
    let mut nb = DenseTensor::zeros(&[bin_dim, bin_dim]);
    for m in 0..bin_dim {
        nb.set(&[m, m], c(m as f64));
    }
    nb
}

fn add_assign(a: &mut DenseTensor, b: &DenseTensor) {
    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
}

fn anti_hermitian_part(a: &DenseTensor) -> DenseTensor {
    let mut g = a.clone();
    g.data_mut()
        .iter_mut()
        .zip(a.adjoint().data())
        .for_each(|(x, y)| *x -= y);
    g
}

/// Generator of the dissipative step on `(feedback bin, spin, future bin)`:
/// `-[sqrt(G_R) e^{-i phi} dB_fb + sqrt(G_L) dB_fut] sigma^+ + h.c.`
pub fn feedback_generator(p: &ModelParams, site: usize) -> Result<DenseTensor> {
    if p.bin_dim < 2 {
        return Err(Error::InvalidParameter(format!("bin_dim must be at least 2, got {}", p.bin_dim)));
    }
    let d = p.bin_dim;
    let db = noise_increment(d, p.dt);
    let id = DenseTensor::identity(d);
    let sp = pauli::raising();
    let fb_coef = -c(p.gamma_r.sqrt()) * (-I * p.phi_at(site)).exp();
    let fut_coef = -c(p.gamma_l.sqrt());
    let mut a = db.kron(&sp).kron(&id).scale(fb_coef);
    add_assign(&mut a, &id.kron(&sp).kron(&db).scale(fut_coef));
    Ok(anti_hermitian_part(&a))
}

/// Three-body dissipative gate, factor order `(feedback bin, spin, future bin)`.
pub fn build_feedback_gate(p: &ModelParams, site: usize) -> Result<DenseTensor> {
    Ok(expm_antihermitian(&feedback_generator(p, site)?, UNITARY_TOL)?)
}

/// Two-body emission gate on `(spin, future bin)` with only the open
/// channel; this is the feedback gate when `Gamma_R = 0`.
pub fn build_emission_gate(p: &ModelParams) -> Result<DenseTensor> {
    if p.bin_dim < 2 {
        return Err(Error::InvalidParameter(format!("bin_dim must be at least 2, got {}", p.bin_dim)));
    }
    let db = noise_increment(p.bin_dim, p.dt);
    let a = pauli::raising().kron(&db).scale(-c(p.gamma_l.sqrt()));
    Ok(expm_antihermitian(&anti_hermitian_part(&a), UNITARY_TOL)?)
}

/// Every gate needed for one run, built once.
#[derive(Clone, Debug)]
pub struct GateSet {
    pub kick_slice: DenseTensor,
    pub ising: IsingSlices,
    /// Per-site three-body gates on `(feedback bin, spin, future bin)`.
    pub feedback: Vec<DenseTensor>,
    /// Two-body gate on `(spin, future bin)` used when `Gamma_R = 0`.
    pub emission: DenseTensor,
}

impl GateSet {
    pub fn build(p: &ModelParams, d: &DisorderRealization) -> Result<Self> {
        p.validate()?;
        Ok(Self {
            kick_slice: build_kick_slice(p)?,
            ising: build_ising_slices(p, d)?,
            feedback: (0..p.n_sites)
                .map(|i| build_feedback_gate(p, i))
                .collect::<Result<_>>()?,
            emission: build_emission_gate(p)?,
        })
    }
}

/// Spin excitation number `(1 + sigma^z) / 2`.
pub fn spin_excitation() -> DenseTensor {
    DenseTensor::from_rows(&[&[ONE, ZERO], &[ZERO, ZERO]]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::contract;

    fn unitary_defect(u: &DenseTensor) -> f64 {
        u.isometry_defect()
    }

    fn matpow(u: &DenseTensor, k: usize) -> DenseTensor {
        let mut out = DenseTensor::identity(u.shape()[0]);
        for _ in 0..k {
            out = out.matmul(u).unwrap();
        }
        out
    }

    #[test]
    fn disorder_lands_in_declared_intervals() {
        let mut p = ModelParams::new(12);
        p.jz = 1.0;
        p.jx = 0.1;
        p.hx = 0.1;
        let d = sample_disorder(&p, 3);
        assert_eq!(d.jz_bonds.len(), 11);
        assert_eq!(d.hx_fields.len(), 12);
        assert!(d.jz_bonds.iter().all(|v| v.abs() <= 1.0));
        assert!(d.jx_bonds.iter().all(|v| v.abs() <= 0.1));
        assert!(d.hx_fields.iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn zero_widths_give_zero_couplings() {
        let mut p = ModelParams::new(5);
        p.jz = 0.0;
        p.jx = 0.0;
        p.hx = 0.0;
        let d = sample_disorder(&p, 0);
        assert!(d.jz_bonds.iter().chain(&d.jx_bonds).chain(&d.hx_fields).all(|&v| v == 0.0));
    }

    #[test]
    fn disorder_is_deterministic_per_stream() {
        let p = ModelParams::new(6);
        assert_eq!(sample_disorder(&p, 4), sample_disorder(&p, 4));
        assert_ne!(sample_disorder(&p, 4), sample_disorder(&p, 5));
        let mut q = p.clone();
        q.seed += 1;
        assert_ne!(sample_disorder(&p, 4), sample_disorder(&q, 4));
    }

    #[test]
    fn half_period_of_kicks_flips_up_to_phase() {
        let mut p = ModelParams::new(1);
        p.epsilon = 0.0;
        let steps = p.steps_per_half().unwrap();
        assert_eq!(steps, 125);
        let u = matpow(&build_kick_slice(&p).unwrap(), steps);
        // |up> -> -i |down>
        assert!((u.get(&[1, 0]) - (-I)).norm() < 1e-12);
        assert!(u.get(&[0, 0]).norm() < 1e-12);
    }

    #[test]
    fn kick_with_epsilon_equal_omega_is_identity() {
        let mut p = ModelParams::new(1);
        p.epsilon = p.omega();
        let u = build_kick_slice(&p).unwrap();
        assert!(u.max_abs_diff(&DenseTensor::identity(2)) < 1e-15);
    }

    #[test]
    fn detuned_kick_rotation_angle() {
        let mut p = ModelParams::new(1);
        p.epsilon = 0.15;
        let u = matpow(&build_kick_slice(&p).unwrap(), p.steps_per_half().unwrap());
        // exp(-i a sigma^x) has diagonal cos(a)
        let angle = u.get(&[0, 0]).re.acos();
        let want = (p.omega() - p.epsilon) * p.period / 2.0;
        assert!((want - (PI / 2.0 - 0.00375)).abs() < 1e-15);
        assert!((angle - want).abs() < 1e-10);
    }

    #[test]
    fn zero_couplings_give_identity_slices() {
        let p = ModelParams::new(4);
        let d = DisorderRealization::uniform(4, 0.0, 0.0, 0.0);
        let s = build_ising_slices(&p, &d).unwrap();
        for g in s.bonds.iter().chain(&s.half_bonds) {
            assert!(g.max_abs_diff(&DenseTensor::identity(4)) < 1e-15);
        }
        for g in s.fields.iter().chain(&s.half_fields) {
            assert!(g.max_abs_diff(&DenseTensor::identity(2)) < 1e-15);
        }
    }

    #[test]
    fn single_zz_bond_is_diagonal_phase() {
        let mut p = ModelParams::new(2);
        p.dt = 0.1;
        p.tau = 0.1;
        p.period = 0.2;
        let d = DisorderRealization::uniform(2, 1.0, 0.0, 0.0);
        let g = &build_ising_slices(&p, &d).unwrap().bonds[0];
        let minus = (-I * 0.1).exp();
        let plus = (I * 0.1).exp();
        let want = [minus, plus, plus, minus];
        for (k, w) in want.iter().enumerate() {
            assert!((g.get(&[k, k]) - w).norm() < 1e-14);
        }
        let off: f64 = (0..4)
            .flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| g.get(&[i, j]).norm())
            .sum();
        assert!(off < 1e-15);
    }

    #[test]
    fn even_bond_gates_commute() {
        let p = ModelParams::new(6);
        let d = sample_disorder(&p, 1);
        let s = build_ising_slices(&p, &d).unwrap();
        // bonds 0 and 2 act on disjoint sites (0,1) and (2,3)
        let a = s.bonds[0].kron(&DenseTensor::identity(4));
        let b = DenseTensor::identity(4).kron(&s.bonds[2]);
        let ab = a.matmul(&b).unwrap();
        let ba = b.matmul(&a).unwrap();
        assert!(ab.max_abs_diff(&ba) < 1e-12);
    }

    #[test]
    fn feedback_gate_is_identity_without_coupling() {
        let p = ModelParams::new(1);
        let g = build_feedback_gate(&p, 0).unwrap();
        assert!(g.max_abs_diff(&DenseTensor::identity(8)) < 1e-15);
    }

    #[test]
    fn feedback_gate_rejects_single_level_bins() {
        let mut p = ModelParams::new(1);
        p.bin_dim = 1;
        assert!(matches!(build_feedback_gate(&p, 0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn open_channel_emission_is_a_rotation() {
        let mut p = ModelParams::new(1);
        p.gamma_l = 0.7;
        let g = build_feedback_gate(&p, 0).unwrap();
        // basis index (fb, spin, fut) = fb*4 + spin*2 + fut
        let x = (p.gamma_l * p.dt).sqrt();
        for fb in 0..2 {
            let from = fb * 4; // spin up, future vacuum
            let to = fb * 4 + 2 + 1; // spin down, future one photon
            assert!((g.get(&[to, from]) - c(x.sin())).norm() < 1e-14);
            assert!((g.get(&[from, from]) - c(x.cos())).norm() < 1e-14);
        }
    }

    #[test]
    fn interfering_channels_match_series() {
        let mut p = ModelParams::new(1).with_gamma(1.0);
        p.phi = PI;
        let gen = feedback_generator(&p, 0).unwrap();
        let g = build_feedback_gate(&p, 0).unwrap();
        // 30-term Taylor series without scaling: the generator norm is ~1e-2
        let mut series = DenseTensor::identity(8);
        let mut term = DenseTensor::identity(8);
        for k in 1..=30 {
            term = term.matmul(&gen).unwrap().scale(c(1.0 / k as f64));
            series.data_mut().iter_mut().zip(term.data()).for_each(|(a, b)| *a += b);
        }
        assert!(g.max_abs_diff(&series) < 1e-12);
        // both channels see the excited spin with empty bins: the state
        // leaks into fb and fut with amplitudes of opposite sign at phi = pi
        let from = 0;
        let to_fut = 2 + 1;
        let to_fb = 4 + 2;
        let a_fut = g.get(&[to_fut, from]);
        let a_fb = g.get(&[to_fb, from]);
        assert!((a_fut + a_fb).norm() < 1e-12 * a_fut.norm().max(1.0) + 1e-14);
    }

    #[test]
    fn emission_gate_matches_markovian_feedback_gate() {
        let mut p = ModelParams::new(1);
        p.gamma_l = 0.4;
        let three = build_feedback_gate(&p, 0).unwrap();
        let two = build_emission_gate(&p).unwrap();
        let lifted = DenseTensor::identity(2).kron(&two);
        assert!(three.max_abs_diff(&lifted) < 1e-14);
    }

    fn total_number(d: usize) -> DenseTensor {
        let id_b = DenseTensor::identity(d);
        let id_s = DenseTensor::identity(2);
        let mut n = bin_number(d).kron(&id_s).kron(&id_b);
        add_assign(&mut n, &id_b.kron(&spin_excitation()).kron(&id_b));
        add_assign(&mut n, &id_b.kron(&id_s).kron(&bin_number(d)));
        n
    }

    #[test]
    fn feedback_gate_conserves_excitations() {
        for d in [2, 3] {
            let mut p = ModelParams::new(1).with_gamma(0.8);
            p.bin_dim = d;
            p.phi = 0.3;
            let g = build_feedback_gate(&p, 0).unwrap();
            let n = total_number(d);
            let lhs = g.matmul(&n).unwrap();
            let rhs = n.matmul(&g).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn symmetric_step_sequence_order() {
        let p = ModelParams::new(4);
        let d = sample_disorder(&p, 0);
        let s = build_ising_slices(&p, &d).unwrap();
        let seq = s.step_sequence();
        let sites: Vec<Vec<usize>> = seq.iter().map(|(s, _)| s.clone()).collect();
        assert_eq!(
            sites,
            vec![
                vec![0], vec![1], vec![2], vec![3],
                vec![0, 1], vec![2, 3],
                vec![1, 2],
                vec![0, 1], vec![2, 3],
                vec![0], vec![1], vec![2], vec![3],
            ]
        );
    }

    #[test]
    fn parameter_validation() {
        let p = ModelParams::new(3);
        assert!(p.validate().is_ok());
        let mut q = p.clone();
        q.bins_per_delay = 2;
        let msg = q.validate().unwrap_err().to_string();
        assert!(msg.contains("0.0002") && msg.contains("tau"), "{msg}");
        let q = p.clone().with_bins_per_delay(2);
        assert!(q.validate().is_ok());
        assert_eq!(q.steps_per_half().unwrap(), 250);
        let mut q = p.clone();
        q.dt = 3e-4;
        q.tau = 3e-4;
        assert!(q.validate().is_err(), "T/(2dt) is not an integer");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn every_gate_is_unitary(
                seed in any::<u64>(),
                eps in -1.0f64..1.0,
                gl in 0.0f64..3.0,
                gr in 0.0f64..3.0,
                phi in 0.0f64..6.3,
                d in 2usize..4,
                l in 1usize..4,
            ) {
                let mut p = ModelParams::new(3).with_bins_per_delay(l);
                p.seed = seed;
                p.epsilon = eps;
                p.gamma_l = gl;
                p.gamma_r = gr;
                p.phi = phi;
                p.bin_dim = d;
                let dis = sample_disorder(&p, 0);
                let gates = GateSet::build(&p, &dis).unwrap();
                prop_assert!(unitary_defect(&gates.kick_slice) < 1e-12);
                for g in gates.ising.bonds.iter().chain(&gates.ising.half_bonds)
                    .chain(&gates.ising.fields).chain(&gates.ising.half_fields)
                    .chain(&gates.feedback) {
                    prop_assert!(unitary_defect(g) < 1e-12);
                }
                prop_assert!(unitary_defect(&gates.emission) < 1e-12);
                let n = total_number(d);
                let fb = &gates.feedback[0];
                prop_assert!(fb.matmul(&n).unwrap().max_abs_diff(&n.matmul(fb).unwrap()) < 1e-12);
            }
        }
    }

    #[test]
    fn kick_flips_neel_pair() {
        let mut p = ModelParams::new(2);
        p.epsilon = 0.0;
        let k = matpow(&build_kick_slice(&p).unwrap(), p.steps_per_half().unwrap());
        let u = k.kron(&k);
        // |up, down> is basis index 1; flipped Neel |down, up> is index 2
        let mut v = DenseTensor::zeros(&[4]);
        v.set(&[1], ONE);
        let out = contract(&u, &v, &[(1, 0)]).unwrap();
        assert!((out.get(&[2]).norm() - 1.0).abs() < 1e-12);
    }
}
