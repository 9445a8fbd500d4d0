//! Exact small-system references.
//!
//! * [`run_dense_qsse`]: the same time-bin protocol as the comb network but
//!   on a density matrix over the spins and the bins that can still
//!   interact. Bins leaving the window are partial-traced, which is exact
//!   for every later spin observable. Supports a single shared bin stream
//!   (`Global`) that the comb cannot represent.
//! * [`run_dense_unitary`] / [`run_exact_floquet`]: closed-system
//!   statevector evolution, sliced like the engine or with exact period
//!   propagators.
//! * [`run_lindblad_markov`]: fixed-step RK4 for the amplitude-damping
//!   master equation.

use serde::{Deserialize, Serialize};

use crate::engine::{check_grids, MagnetizationSeries, RunConfig};
use crate::error::{Error, Result};
use crate::model::{DisorderRealization, GateSet, ModelParams};
use crate::tensor::{expm, matmul_row_major, pauli, strides, DenseTensor, C64, I, ONE, ZERO};

/// Largest active-register dimension the density-matrix oracle accepts;
/// the matrix then holds `MAX_DENSE_DIM^2` complex entries (64 MiB).
pub const MAX_DENSE_DIM: usize = 2048;
/// Largest chain for statevector references.
pub const MAX_STATEVECTOR_SITES: usize = 14;
/// Largest chain for the Lindblad integrator and exact propagators.
pub const MAX_LINDBLAD_SITES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservoirMode {
    /// One waveguide per spin.
    Individual,
    /// One waveguide shared by all spins with equal coupling; within a time
    /// step the spins couple to the shared bins one after another.
    Global,
}

/// Applies `op` (dimension = product of the selected factor dimensions, the
/// first listed factor slowest) to the listed tensor factors of `v`.
pub fn apply_local(v: &mut [C64], dims: &[usize], factors: &[usize], op: &DenseTensor) {
    let st = strides(dims);
    let local: Vec<usize> = factors.iter().map(|&f| dims[f]).collect();
    let g: usize = local.iter().product();
    assert_eq!(op.shape(), [g, g], "operator does not match the selected factors");
    assert_eq!(v.len(), dims.iter().product::<usize>());
    let offsets: Vec<usize> = (0..g)
        .map(|mut j| {
            let mut off = 0;
            for (k, &f) in factors.iter().enumerate().rev() {
                off += (j % local[k]) * st[f];
                j /= local[k];
            }
            off
        })
        .collect();
    let others: Vec<usize> = (0..dims.len()).filter(|k| !factors.contains(k)).collect();
    let m = op.data();
    let mut counter = vec![0usize; others.len()];
    let mut buf = vec![ZERO; g];
    loop {
        let base: usize = others.iter().zip(&counter).map(|(&f, &c)| c * st[f]).sum();
        for (b, &off) in buf.iter_mut().zip(&offsets) {
            *b = v[base + off];
        }
        for (r, &off) in offsets.iter().enumerate() {
            let row = &m[r * g..(r + 1) * g];
            v[base + off] = row.iter().zip(&buf).map(|(a, b)| a * b).sum();
        }
        // odometer over the untouched factors
        let mut k = others.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            counter[k] += 1;
            if counter[k] < dims[others[k]] {
                break;
            }
            counter[k] = 0;
        }
    }
}

/// `op` acting on `sites` of an `n`-spin chain, as a full `2^n x 2^n`
/// matrix.
pub fn embed(op: &DenseTensor, sites: &[usize], n: usize) -> DenseTensor {
    let dim = 1usize << n;
    let mut m = DenseTensor::identity(dim);
    let dims = vec![2; 2 * n];
    apply_local(m.data_mut(), &dims, sites, op);
    m
}

fn add_into(acc: &mut DenseTensor, term: &DenseTensor) {
    acc.data_mut().iter_mut().zip(term.data()).for_each(|(a, b)| *a += b);
}

/// Kick Hamiltonian `(Omega - eps) sum_i sigma^x_i`.
pub fn kick_hamiltonian(p: &ModelParams) -> DenseTensor {
    let n = p.n_sites;
    let mut h = DenseTensor::zeros(&[1 << n, 1 << n]);
    let x = pauli::x().scale(C64::new(p.omega() - p.epsilon, 0.0));
    for i in 0..n {
        add_into(&mut h, &embed(&x, &[i], n));
    }
    h
}

/// Disordered Ising Hamiltonian of one realization.
pub fn ising_hamiltonian(d: &DisorderRealization) -> DenseTensor {
    let n = d.n_sites();
    let mut h = DenseTensor::zeros(&[1 << n, 1 << n]);
    let zz = pauli::z().kron(&pauli::z());
    let xx = pauli::x().kron(&pauli::x());
    for b in 0..n.saturating_sub(1) {
        add_into(&mut h, &embed(&zz.clone().scale(C64::new(d.jz_bonds[b], 0.0)), &[b, b + 1], n));
        add_into(&mut h, &embed(&xx.clone().scale(C64::new(d.jx_bonds[b], 0.0)), &[b, b + 1], n));
    }
    for i in 0..n {
        add_into(&mut h, &embed(&pauli::x().scale(C64::new(d.hx_fields[i], 0.0)), &[i], n));
    }
    h
}

fn neel_amplitudes(n: usize) -> Vec<C64> {
    let mut psi = vec![ZERO; 1 << n];
    // site 0 is the most significant factor; |up> is index 0
    let idx = (0..n).fold(0usize, |acc, i| (acc << 1) | (i % 2));
    psi[idx] = ONE;
    psi
}

/// `<sigma^z_i>` from computational-basis probabilities.
fn sz_from_probs(probs: impl Fn(usize) -> f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let shift = n - 1 - i;
            (0..1usize << n)
                .map(|k| if (k >> shift) & 1 == 0 { probs(k) } else { -probs(k) })
                .sum()
        })
        .collect()
}

fn sz_profile_pure(psi: &[C64], n: usize) -> Vec<f64> {
    sz_from_probs(|k| psi[k].norm_sqr(), n)
}

fn guard_sites(p: &ModelParams, max: usize, what: &str) -> Result<()> {
    if p.n_sites > max {
        return Err(Error::Resource(format!(
            "{what} handles at most {max} sites, got {}",
            p.n_sites
        )));
    }
    Ok(())
}

/// Shared stepping/recording loop for the dense references.
fn drive<S>(
    p: &ModelParams,
    rc: &RunConfig,
    state: &mut S,
    mut kick: impl FnMut(&mut S) -> Result<()>,
    mut ising: impl FnMut(&mut S) -> Result<()>,
    mut measure: impl FnMut(&S) -> Result<Vec<f64>>,
) -> Result<MagnetizationSeries> {
    rc.validate()?;
    let steps = p.steps_per_half()?;
    let mut series = MagnetizationSeries::default();
    let mut taken = 0u64;
    let mut record = |state: &S, taken: u64, series: &mut MagnetizationSeries| -> Result<()> {
        let t = taken as f64 * p.dt;
        series.push(t / p.period, t, measure(state)?, 0.0, 0);
        Ok(())
    };
    record(state, taken, &mut series)?;
    for n in 1..=rc.periods {
        for _ in 0..steps {
            kick(state)?;
            taken += 1;
            if rc.measure_every_step {
                record(state, taken, &mut series)?;
            }
        }
        for _ in 0..steps {
            ising(state)?;
            taken += 1;
            if rc.measure_every_step {
                record(state, taken, &mut series)?;
            }
        }
        if !rc.measure_every_step && n % rc.measure_every == 0 {
            record(state, taken, &mut series)?;
        }
    }
    Ok(series)
}

/// Closed-system statevector evolution with exactly the engine's Trotter
/// slices.
pub fn run_dense_unitary(p: &ModelParams, d: &DisorderRealization, rc: &RunConfig) -> Result<MagnetizationSeries> {
    guard_sites(p, MAX_STATEVECTOR_SITES, "statevector evolution")?;
    let gates = GateSet::build(p, d)?;
    let n = p.n_sites;
    let dims = vec![2; n];
    let mut psi = neel_amplitudes(n);
    drive(
        p,
        rc,
        &mut psi,
        |psi| {
            for i in 0..n {
                apply_local(psi, &dims, &[i], &gates.kick_slice);
            }
            Ok(())
        },
        |psi| {
            for (sites, g) in gates.ising.step_sequence() {
                apply_local(psi, &dims, &sites, g);
            }
            Ok(())
        },
        |psi| Ok(sz_profile_pure(psi, n)),
    )
}

/// Closed-system evolution with exact half-period propagators. Only
/// stroboscopic records are available.
pub fn run_exact_floquet(p: &ModelParams, d: &DisorderRealization, rc: &RunConfig) -> Result<MagnetizationSeries> {
    guard_sites(p, 10, "exact propagation")?;
    p.validate()?;
    rc.validate()?;
    if rc.measure_every_step {
        return Err(Error::InvalidParameter(
            "exact propagation records only at period boundaries".into(),
        ));
    }
    let n = p.n_sites;
    let half = 0.5 * p.period;
    let u_kick = expm(&kick_hamiltonian(p).scale(-I * half));
    let u_ising = expm(&ising_hamiltonian(d).scale(-I * half));
    let floquet = u_ising.matmul(&u_kick)?;
    let dim = 1 << n;
    let mut psi = neel_amplitudes(n);
    let mut series = MagnetizationSeries::default();
    series.push(0.0, 0.0, sz_profile_pure(&psi, n), 0.0, 0);
    for k in 1..=rc.periods {
        psi = matmul_row_major(floquet.data(), &psi, dim, dim, 1);
        if k % rc.measure_every == 0 {
            series.push(k as f64, k as f64 * p.period, sz_profile_pure(&psi, n), 0.0, 0);
        }
    }
    Ok(series)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Factor {
    Spin(usize),
    Bin { stream: usize, clock: i64 },
}

/// Density matrix over a labelled tensor-product register. The matrix is
/// stored as a vector over `(row factors..., column factors...)`.
#[derive(Clone, Debug)]
struct Register {
    factors: Vec<Factor>,
    dims: Vec<usize>,
    rho: Vec<C64>,
}

impl Register {
    fn pure_neel(n: usize) -> Self {
        let psi = neel_amplitudes(n);
        let dim = psi.len();
        let mut rho = vec![ZERO; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                rho[r * dim + c] = psi[r] * psi[c].conj();
            }
        }
        Self {
            factors: (0..n).map(Factor::Spin).collect(),
            dims: vec![2; n],
            rho,
        }
    }

    fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    fn index_of(&self, f: Factor) -> usize {
        self.factors
            .iter()
            .position(|&g| g == f)
            .unwrap_or_else(|| panic!("factor {f:?} not in register"))
    }

    fn append_vacuum(&mut self, f: Factor, d: usize) {
        let old = self.dim();
        let new = old * d;
        let mut rho = vec![ZERO; new * new];
        for r in 0..old {
            for c in 0..old {
                rho[(r * d) * new + c * d] = self.rho[r * old + c];
            }
        }
        self.rho = rho;
        self.factors.push(f);
        self.dims.push(d);
    }

    fn apply(&mut self, on: &[Factor], u: &DenseTensor) {
        let idx: Vec<usize> = on.iter().map(|&f| self.index_of(f)).collect();
        let k = self.dims.len();
        let doubled: Vec<usize> = self.dims.iter().chain(&self.dims).copied().collect();
        apply_local(&mut self.rho, &doubled, &idx, u);
        let cols: Vec<usize> = idx.iter().map(|&i| i + k).collect();
        apply_local(&mut self.rho, &doubled, &cols, &u.conj());
    }

    fn trace_out(&mut self, f: Factor) {
        let k = self.index_of(f);
        let pre: usize = self.dims[..k].iter().product();
        let dk = self.dims[k];
        let post: usize = self.dims[k + 1..].iter().product();
        let old = self.dim();
        let new = pre * post;
        let mut rho = vec![ZERO; new * new];
        for a in 0..pre {
            for b in 0..post {
                let row = a * post + b;
                for a2 in 0..pre {
                    for b2 in 0..post {
                        let mut s = ZERO;
                        for m in 0..dk {
                            let r = (a * dk + m) * post + b;
                            let c = (a2 * dk + m) * post + b2;
                            s += self.rho[r * old + c];
                        }
                        rho[row * new + a2 * post + b2] = s;
                    }
                }
            }
        }
        self.rho = rho;
        self.factors.remove(k);
        self.dims.remove(k);
    }

    fn trace(&self) -> f64 {
        let dim = self.dim();
        (0..dim).map(|r| self.rho[r * dim + r].re).sum()
    }

    fn sz_profile(&self, n: usize) -> Vec<f64> {
        let dim = self.dim();
        let st = strides(&self.dims);
        (0..n)
            .map(|i| {
                let k = self.index_of(Factor::Spin(i));
                (0..dim)
                    .map(|r| {
                        let p = self.rho[r * dim + r].re;
                        if (r / st[k]) % self.dims[k] == 0 {
                            p
                        } else {
                            -p
                        }
                    })
                    .sum()
            })
            .collect()
    }
}

/// Largest register dimension [`run_dense_qsse`] reaches for `p`.
pub fn dense_qsse_dimension(p: &ModelParams, mode: ReservoirMode) -> usize {
    let spins = 1usize << p.n_sites.min(usize::BITS as usize - 1);
    if p.is_closed() {
        return spins;
    }
    let bins = if p.is_markovian() {
        1
    } else {
        match mode {
            ReservoirMode::Individual => p.n_sites * p.bins_per_delay + 1,
            ReservoirMode::Global => p.bins_per_delay + 1,
        }
    };
    spins.saturating_mul(p.bin_dim.saturating_pow(bins as u32))
}

/// Exact time-bin evolution on a density matrix.
pub fn run_dense_qsse(
    p: &ModelParams,
    d: &DisorderRealization,
    rc: &RunConfig,
    mode: ReservoirMode,
) -> Result<MagnetizationSeries> {
    p.validate()?;
    let dim = dense_qsse_dimension(p, mode);
    if p.n_sites > 16 || dim > MAX_DENSE_DIM {
        return Err(Error::Resource(format!(
            "dense register would reach dimension {dim} (limit {MAX_DENSE_DIM}) for {} sites",
            p.n_sites
        )));
    }
    let ctx = QsseStep {
        gates: GateSet::build(p, d)?,
        n: p.n_sites,
        bin_dim: p.bin_dim,
        delay: p.bins_per_delay as i64,
        mode,
        closed: p.is_closed(),
        feedback: !p.is_closed() && !p.is_markovian(),
    };
    let mut state = (Register::pure_neel(p.n_sites), 0i64);
    if ctx.feedback {
        for stream in 0..ctx.streams() {
            for clock in -ctx.delay..0 {
                state.0.append_vacuum(Factor::Bin { stream, clock }, ctx.bin_dim);
            }
        }
    }
    let seq: Vec<(Vec<Factor>, &DenseTensor)> = ctx
        .gates
        .ising
        .step_sequence()
        .into_iter()
        .map(|(s, g)| (s.into_iter().map(Factor::Spin).collect(), g))
        .collect();
    drive(
        p,
        rc,
        &mut state,
        |(reg, clock)| {
            for i in 0..ctx.n {
                reg.apply(&[Factor::Spin(i)], &ctx.gates.kick_slice);
            }
            ctx.dissipate(reg, clock)
        },
        |(reg, clock)| {
            for (f, g) in &seq {
                reg.apply(f, g);
            }
            ctx.dissipate(reg, clock)
        },
        |(reg, _)| Ok(reg.sz_profile(ctx.n)),
    )
}

struct QsseStep {
    gates: GateSet,
    n: usize,
    bin_dim: usize,
    delay: i64,
    mode: ReservoirMode,
    closed: bool,
    feedback: bool,
}

impl QsseStep {
    fn streams(&self) -> usize {
        match self.mode {
            ReservoirMode::Individual => self.n,
            ReservoirMode::Global => 1,
        }
    }

    fn sites_of(&self, stream: usize) -> std::ops::Range<usize> {
        match self.mode {
            ReservoirMode::Individual => stream..stream + 1,
            ReservoirMode::Global => 0..self.n,
        }
    }

    /// One dissipative step: every stream gets a fresh bin, its spins couple
    /// to it (and to the bin written `delay` steps earlier), and the bin
    /// that can no longer interact is traced out.
    fn dissipate(&self, reg: &mut Register, clock: &mut i64) -> Result<()> {
        if self.closed {
            return Ok(());
        }
        for stream in 0..self.streams() {
            let fut = Factor::Bin { stream, clock: *clock };
            let fb = Factor::Bin {
                stream,
                clock: *clock - self.delay,
            };
            reg.append_vacuum(fut, self.bin_dim);
            for site in self.sites_of(stream) {
                if self.feedback {
                    reg.apply(&[fb, Factor::Spin(site), fut], &self.gates.feedback[site]);
                } else {
                    reg.apply(&[Factor::Spin(site), fut], &self.gates.emission);
                }
            }
            reg.trace_out(if self.feedback { fb } else { fut });
        }
        *clock += 1;
        let tr = reg.trace();
        if (tr - 1.0).abs() > 1e-8 {
            return Err(Error::Numerical(format!("density matrix trace drifted to {tr}")));
        }
        Ok(())
    }
}

/// `rho' = L(rho)` for the amplitude-damping master equation, written with
/// the non-Hermitian `h_eff = H - (i G/2) sum_i n_i`.
fn lindblad_rhs(rho: &[C64], h_eff: &DenseTensor, h_eff_dag: &DenseTensor, gamma: f64, n: usize) -> Vec<C64> {
    let dim = 1usize << n;
    let a = matmul_row_major(h_eff.data(), rho, dim, dim, dim);
    let b = matmul_row_major(rho, h_eff_dag.data(), dim, dim, dim);
    let mut out: Vec<C64> = a.iter().zip(&b).map(|(x, y)| -I * (x - y)).collect();
    if gamma > 0.0 {
        let dims = vec![2; 2 * n];
        let lower = pauli::lowering();
        for i in 0..n {
            let mut jump = rho.to_vec();
            apply_local(&mut jump, &dims, &[i], &lower);
            apply_local(&mut jump, &dims, &[i + n], &lower);
            out.iter_mut().zip(&jump).for_each(|(o, j)| *o += j * gamma);
        }
    }
    out
}

fn rk4_step(rho: &mut [C64], h: f64, h_eff: &DenseTensor, h_dag: &DenseTensor, gamma: f64, n: usize) {
    let axpy = |x: &[C64], k: &[C64], s: f64| -> Vec<C64> { x.iter().zip(k).map(|(a, b)| a + b * s).collect() };
    let k1 = lindblad_rhs(rho, h_eff, h_dag, gamma, n);
    let k2 = lindblad_rhs(&axpy(rho, &k1, 0.5 * h), h_eff, h_dag, gamma, n);
    let k3 = lindblad_rhs(&axpy(rho, &k2, 0.5 * h), h_eff, h_dag, gamma, n);
    let k4 = lindblad_rhs(&axpy(rho, &k3, h), h_eff, h_dag, gamma, n);
    for (i, r) in rho.iter_mut().enumerate() {
        *r += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
    }
}

/// Substeps per time step so that `h * |H|` stays below 0.01; the RK4
/// error is then far below any Trotter error it is compared against.
fn lindblad_substeps(p: &ModelParams, d: &DisorderRealization) -> usize {
    let n = p.n_sites as f64;
    let kick = n * (p.omega() - p.epsilon).abs();
    let ising: f64 = d.jz_bonds.iter().chain(&d.jx_bonds).chain(&d.hx_fields).map(|v| v.abs()).sum();
    let scale = kick.max(ising) + p.gamma_l * n;
    ((p.dt * scale / 0.01).ceil() as usize).max(1)
}

struct LindbladState {
    rho: Vec<C64>,
    n: usize,
}

impl LindbladState {
    fn sz_profile(&self) -> Vec<f64> {
        let dim = 1usize << self.n;
        sz_from_probs(|k| self.rho[k * dim + k].re, self.n)
    }
}

/// Markovian reference: `d rho/dt = -i[H(t), rho] + G_L sum_i D[sigma^-_i]`
/// with the piecewise kick / Ising Hamiltonian, fixed-step RK4 with at least
/// one substep per time step.
pub fn run_lindblad_markov(p: &ModelParams, d: &DisorderRealization, rc: &RunConfig) -> Result<MagnetizationSeries> {
    guard_sites(p, MAX_LINDBLAD_SITES, "the Lindblad integrator")?;
    p.validate()?;
    let n = p.n_sites;
    let dim = 1usize << n;
    let damping = {
        let mut acc = DenseTensor::zeros(&[dim, dim]);
        let num = crate::model::spin_excitation();
        for i in 0..n {
            add_into(&mut acc, &embed(&num, &[i], n));
        }
        acc.scale(C64::new(0.0, -0.5 * p.gamma_l))
    };
    let effective = |h: DenseTensor| {
        let mut h = h;
        add_into(&mut h, &damping);
        let dag = h.adjoint();
        (h, dag)
    };
    let (kick_eff, kick_dag) = effective(kick_hamiltonian(p));
    let (ising_eff, ising_dag) = effective(ising_hamiltonian(d));
    let sub = lindblad_substeps(p, d);
    let h = p.dt / sub as f64;
    let psi = neel_amplitudes(n);
    let mut rho = vec![ZERO; dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            rho[r * dim + c] = psi[r] * psi[c].conj();
        }
    }
    let mut state = LindbladState { rho, n };
    let gamma = p.gamma_l;
    drive(
        p,
        rc,
        &mut state,
        |s| {
            for _ in 0..sub {
                rk4_step(&mut s.rho, h, &kick_eff, &kick_dag, gamma, n);
            }
            Ok(())
        },
        |s| {
            for _ in 0..sub {
                rk4_step(&mut s.rho, h, &ising_eff, &ising_dag, gamma, n);
            }
            Ok(())
        },
        |s| {
            let tr: f64 = (0..dim).map(|r| s.rho[r * dim + r].re).sum();
            if (tr - 1.0).abs() > 1e-6 {
                return Err(Error::Numerical(format!("Lindblad trace drifted to {tr}")));
            }
            Ok(s.sz_profile())
        },
    )
}

/// Largest pointwise `|a.m - b.m|`.
pub fn compare_series(a: &MagnetizationSeries, b: &MagnetizationSeries) -> Result<f64> {
    check_grids(a, b)?;
    Ok(a.m_values
        .iter()
        .zip(&b.m_values)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}
