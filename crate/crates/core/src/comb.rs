//! Comb-shaped matrix product state: a spine of spin tensors, each carrying
//! an arm of reservoir time bins.
//!
//! ```text
//!   env─[b_k-2]─[b_k-1]─[b_k]─┐
//!                             │ res
//!                 ─── S_i ───(left, phys, right)───
//! ```
//!
//! Spine tensors have axes `(left, phys, right, res)`; bin tensors have axes
//! `(inner, phys, outer)` where `inner` points toward the spine. Position 0
//! of an arm is the bin adjacent to the spine (the newest one). The outer
//! bond of the last bin is left dangling: it labels an orthonormal basis of
//! everything that has already left the arm, which is how retired bins are
//! dropped without approximation.
//!
//! The network is kept in tree-canonical form: every tensor other than the
//! orthogonality center is an isometry from its other legs onto the leg that
//! points toward the center.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{
    contract, qr_orthogonalize, svd_truncate, Bipartition, DenseTensor, SvdResult, C64, ONE, ZERO,
};

/// Smallest relative weight the evolution ever discards on purpose: the
/// spacing of doubles near one, below which a weight cannot change the norm.
pub const WEIGHT_FLOOR: f64 = f64::EPSILON;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationPolicy {
    pub max_bond: usize,
    /// Relative discarded weight allowed per decomposition, in `[0, 1)`.
    pub cutoff: f64,
    pub track_discarded: bool,
}

impl TruncationPolicy {
    /// No truncation beyond numerically zero singular values.
    pub fn exact() -> Self {
        Self {
            max_bond: usize::MAX,
            cutoff: 0.0,
            track_discarded: true,
        }
    }

    /// Policy for time evolution. The cutoff never goes below
    /// [`WEIGHT_FLOOR`], so `cutoff = 0` means "keep everything the norm can
    /// resolve" rather than keeping an ever-growing tail of singular values
    /// far below double precision in weight.
    pub fn from_params(p: &ModelParams) -> Self {
        Self {
            max_bond: p.max_bond,
            cutoff: p.cutoff.max(WEIGHT_FLOOR),
            track_discarded: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Center {
    Spine(usize),
    Arm { site: usize, pos: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bond {
    /// Between spine sites `b` and `b + 1`.
    Spine(usize),
    /// Between arm position `pos` and its inner neighbour (the spine tensor
    /// when `pos == 0`).
    Arm { site: usize, pos: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug)]
pub struct CombMps {
    spine: Vec<DenseTensor>,
    arms: Vec<Vec<DenseTensor>>,
    center: Center,
    bin_dim: usize,
    /// Bins per arm that can still interact (the delay in steps).
    window: usize,
    accumulated_truncation: f64,
    swap_truncation: f64,
    bin_clock: Vec<u64>,
    dropped_bins: Vec<u64>,
}

impl CombMps {
    /// Néel product state `|up down up ...>` with `bins_per_delay` vacuum bins
    /// on every arm.
    pub fn init_neel_vacuum(p: &ModelParams) -> Self {
        let spins: Vec<[C64; 2]> = (0..p.n_sites)
            .map(|i| if i % 2 == 0 { [ONE, ZERO] } else { [ZERO, ONE] })
            .collect();
        Self::init_product(&spins, p.bin_dim, p.bins_per_delay)
    }

    /// Arbitrary product of (unnormalized) spin states with vacuum arms.
    pub fn init_product(spins: &[[C64; 2]], bin_dim: usize, window: usize) -> Self {
        assert!(!spins.is_empty(), "need at least one site");
        let spine = spins
            .iter()
            .map(|s| DenseTensor::new(vec![1, 2, 1, 1], s.to_vec()).unwrap())
            .collect();
        let arms = (0..spins.len())
            .map(|_| (0..window).map(|_| vacuum_bin(1, bin_dim)).collect())
            .collect();
        let mut mps = Self {
            spine,
            arms,
            center: Center::Spine(0),
            bin_dim,
            window,
            accumulated_truncation: 0.0,
            swap_truncation: 0.0,
            bin_clock: vec![0; spins.len()],
            dropped_bins: vec![0; spins.len()],
        };
        // in a product state every unit-norm factor is already isometric
        for t in &mut mps.spine {
            let n = t.norm();
            assert!(n > 0.0, "spin states must be nonzero");
            *t = t.clone().scale(C64::new(1.0 / n, 0.0));
        }
        mps
    }

    pub fn n_sites(&self) -> usize {
        self.spine.len()
    }

    pub fn bin_dim(&self) -> usize {
        self.bin_dim
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn center(&self) -> Center {
        self.center
    }

    pub fn arm_len(&self, site: usize) -> usize {
        self.arms[site].len()
    }

    pub fn bin_clock(&self, site: usize) -> u64 {
        self.bin_clock[site]
    }

    /// Bins removed from `site`'s arm so far.
    pub fn dropped_bins(&self, site: usize) -> u64 {
        self.dropped_bins[site]
    }

    pub fn accumulated_truncation(&self) -> f64 {
        self.accumulated_truncation
    }

    /// Part of the accumulated truncation spent in bin swaps.
    pub fn swap_truncation(&self) -> f64 {
        self.swap_truncation
    }

    pub fn spine_tensor(&self, site: usize) -> &DenseTensor {
        &self.spine[site]
    }

    pub fn arm_tensor(&self, site: usize, pos: usize) -> &DenseTensor {
        &self.arms[site][pos]
    }

    /// `<psi|psi>`, read off the orthogonality center.
    pub fn norm_sqr(&self) -> f64 {
        match self.center {
            Center::Spine(i) => self.spine[i].norm_sqr(),
            Center::Arm { site, pos } => self.arms[site][pos].norm_sqr(),
        }
    }

    /// Largest bond dimension anywhere in the network, including the
    /// dangling environment legs.
    pub fn max_bond(&self) -> usize {
        let spine = self.spine.iter().map(|t| t.shape()[2].max(t.shape()[3]));
        let arms = self.arms.iter().flatten().map(|t| t.shape()[2]);
        spine.chain(arms).max().unwrap_or(1)
    }

    /// Dimensions of the spine bonds `0..n-1`.
    pub fn spine_bond_dims(&self) -> Vec<usize> {
        self.spine[..self.spine.len() - 1].iter().map(|t| t.shape()[2]).collect()
    }

    // ---- gauge moves -------------------------------------------------------

    pub fn move_center(&mut self, target: Center) {
        loop {
            let here = self.center;
            if here == target {
                return;
            }
            match (here, target) {
                (Center::Arm { site, pos }, Center::Arm { site: ts, pos: tp }) if site == ts => {
                    if pos < tp {
                        self.shift_arm_out(site, pos);
                    } else {
                        self.shift_arm_in(site, pos);
                    }
                }
                (Center::Arm { site, pos }, _) => self.shift_arm_in(site, pos),
                (Center::Spine(i), Center::Arm { site, .. }) if i == site => self.shift_into_arm(i),
                (Center::Spine(i), Center::Arm { site: t, .. }) | (Center::Spine(i), Center::Spine(t)) => {
                    if i < t {
                        self.shift_spine_right(i);
                    } else {
                        self.shift_spine_left(i);
                    }
                }
            }
        }
    }

    fn shift_spine_right(&mut self, i: usize) {
        let (q, r) = qr_orthogonalize(&self.spine[i], &Bipartition::new(vec![0, 1, 3], vec![2])).unwrap();
        self.spine[i] = q.permute(&[0, 1, 3, 2]);
        self.spine[i + 1] = contract(&r, &self.spine[i + 1], &[(1, 0)]).unwrap();
        self.center = Center::Spine(i + 1);
    }

    fn shift_spine_left(&mut self, i: usize) {
        let (q, r) = qr_orthogonalize(&self.spine[i], &Bipartition::new(vec![1, 2, 3], vec![0])).unwrap();
        // rows of q^T are orthonormal; the remainder enters transposed
        self.spine[i] = q.permute(&[3, 0, 1, 2]);
        let left = contract(&self.spine[i - 1], &r, &[(2, 1)]).unwrap();
        self.spine[i - 1] = left.permute(&[0, 1, 3, 2]);
        self.center = Center::Spine(i - 1);
    }

    fn shift_into_arm(&mut self, site: usize) {
        let (q, r) = qr_orthogonalize(&self.spine[site], &Bipartition::new(vec![0, 1, 2], vec![3])).unwrap();
        self.spine[site] = q;
        let first = &self.arms[site][0];
        self.arms[site][0] = contract(&r, first, &[(1, 0)]).unwrap();
        self.center = Center::Arm { site, pos: 0 };
    }

    fn shift_arm_out(&mut self, site: usize, pos: usize) {
        let arm = &mut self.arms[site];
        let (q, r) = qr_orthogonalize(&arm[pos], &Bipartition::new(vec![0, 1], vec![2])).unwrap();
        arm[pos] = q;
        arm[pos + 1] = contract(&r, &arm[pos + 1], &[(1, 0)]).unwrap();
        self.center = Center::Arm { site, pos: pos + 1 };
    }

    fn shift_arm_in(&mut self, site: usize, pos: usize) {
        let (q, r) = qr_orthogonalize(&self.arms[site][pos], &Bipartition::new(vec![1, 2], vec![0])).unwrap();
        self.arms[site][pos] = q.permute(&[2, 0, 1]);
        if pos == 0 {
            self.spine[site] = contract(&self.spine[site], &r, &[(3, 1)]).unwrap();
            self.center = Center::Spine(site);
        } else {
            let arm = &mut self.arms[site];
            arm[pos - 1] = contract(&arm[pos - 1], &r, &[(2, 1)]).unwrap();
            self.center = Center::Arm { site, pos: pos - 1 };
        }
    }

    /// Truncated SVD that books the discarded weight and rescales the kept
    /// spectrum so the norm is unchanged.
    fn split(&mut self, theta: &DenseTensor, bip: Bipartition, policy: &TruncationPolicy, swap: bool) -> SvdResult {
        let mut svd = svd_truncate(theta, &bip, policy.max_bond, policy.cutoff).expect("valid split");
        if svd.discarded_weight > 0.0 {
            if policy.track_discarded {
                self.accumulated_truncation += svd.discarded_weight;
                if swap {
                    self.swap_truncation += svd.discarded_weight;
                }
            }
            let kept: f64 = svd.singular_values.iter().map(|s| s * s).sum();
            if kept > 0.0 {
                let rescale = (theta.norm_sqr() / kept).sqrt();
                svd.singular_values.iter_mut().for_each(|s| *s *= rescale);
            }
        }
        svd
    }

    // ---- gates -------------------------------------------------------------

    /// Applies a one-site (2x2) or nearest-neighbour (4x4, factor order
    /// `(sites[0], sites[1])`) gate to the spine. Two-site gates move the
    /// center onto the pair and leave it on the right site.
    pub fn apply_spine_gate(&mut self, gate: &DenseTensor, sites: &[usize], policy: &TruncationPolicy) -> Result<()> {
        match *sites {
            [i] => {
                self.check_site(i)?;
                self.check_gate(gate, 2)?;
                self.apply_single(i, gate);
                Ok(())
            }
            [i, j] => {
                self.check_site(i)?;
                self.check_site(j)?;
                self.check_gate(gate, 4)?;
                if j != i + 1 {
                    return Err(Error::Contract(format!(
                        "two-site gates need adjacent ascending sites, got ({i}, {j})"
                    )));
                }
                self.apply_pair(i, gate, policy, Side::Right);
                Ok(())
            }
            _ => Err(Error::Contract(format!("gates act on one or two sites, got {sites:?}"))),
        }
    }

    fn check_site(&self, i: usize) -> Result<()> {
        if i >= self.n_sites() {
            return Err(Error::Contract(format!("site {i} out of range for {} sites", self.n_sites())));
        }
        Ok(())
    }

    fn check_gate(&self, gate: &DenseTensor, dim: usize) -> Result<()> {
        if gate.shape() != [dim, dim] {
            return Err(Error::Contract(format!("expected a {dim}x{dim} gate, got {:?}", gate.shape())));
        }
        Ok(())
    }

    /// Unitaries on a physical leg preserve every isometry condition, so
    /// this needs no gauge move.
    pub(crate) fn apply_single(&mut self, i: usize, gate: &DenseTensor) {
        let t = &mut self.spine[i];
        let shape = t.shape().to_vec();
        let (l, r, res) = (shape[0], shape[2], shape[3]);
        let inner = r * res;
        let g = gate.data();
        let data = t.data_mut();
        for a in 0..l {
            let base = a * 2 * inner;
            for k in 0..inner {
                let up = data[base + k];
                let dn = data[base + inner + k];
                data[base + k] = g[0] * up + g[1] * dn;
                data[base + inner + k] = g[2] * up + g[3] * dn;
            }
        }
    }

    /// Two-site gate on bond `(b, b+1)`.
    pub(crate) fn apply_pair(&mut self, b: usize, gate: &DenseTensor, policy: &TruncationPolicy, leave: Side) {
        match self.center {
            Center::Spine(c) if c == b || c == b + 1 => {}
            Center::Spine(c) if c > b + 1 => self.move_center(Center::Spine(b + 1)),
            _ => self.move_center(Center::Spine(b)),
        }
        // Peel off the legs the gate does not touch so the SVD only sees
        // the reduced cores. Q factors are isometries, so the Schmidt
        // values, and hence the truncation, are those of the full pair.
        // A_b = Qa (l, res1, k1) Ra (k1, n1, r)
        let (qa, ra) = qr_orthogonalize(&self.spine[b], &Bipartition::new(vec![0, 3], vec![1, 2])).unwrap();
        // A_b+1 = Rb (k2, l2, n2) Qb (r2, res2, k2)
        let (qb, rb) = qr_orthogonalize(&self.spine[b + 1], &Bipartition::new(vec![2, 3], vec![0, 1])).unwrap();
        // (k1, n1, k2, n2)
        let theta = contract(&ra, &rb, &[(2, 1)]).unwrap();
        let g = gate.clone().reshape(&[2, 2, 2, 2]).unwrap();
        // (n1', n2', k1, k2)
        let theta = contract(&g, &theta, &[(2, 1), (3, 3)]).unwrap();
        let svd = self.split(&theta, Bipartition::new(vec![2, 0], vec![1, 3]), policy, false);
        let (left, right) = match leave {
            Side::Right => (svd.left_isometry.clone(), svd.right_weighted()),
            Side::Left => (svd.left_weighted(), svd.right_isometry.clone()),
        };
        // (l, res1, n1', chi) and (chi, n2', r2, res2)
        self.spine[b] = contract(&qa, &left, &[(2, 0)]).unwrap().permute(&[0, 2, 3, 1]);
        self.spine[b + 1] = contract(&right, &qb, &[(2, 2)]).unwrap();
        self.center = Center::Spine(if leave == Side::Right { b + 1 } else { b });
    }

    /// Inserts a vacuum bin next to the spine on `site`'s arm.
    pub fn append_bin(&mut self, site: usize) {
        let res = self.spine[site].shape()[3];
        self.arms[site].insert(0, vacuum_bin(res, self.bin_dim));
        self.bin_clock[site] += 1;
        if let Center::Arm { site: s, pos } = self.center {
            if s == site {
                self.center = Center::Arm { site, pos: pos + 1 };
            }
        }
    }

    /// Swaps arm positions `pos` and `pos + 1`.
    fn swap_pair(&mut self, site: usize, pos: usize, policy: &TruncationPolicy, leave: Side) {
        let arm = &self.arms[site];
        // (in, m1, m2, out)
        let theta = contract(&arm[pos], &arm[pos + 1], &[(2, 0)]).unwrap();
        let svd = self.split(&theta, Bipartition::new(vec![0, 2], vec![1, 3]), policy, true);
        let (inner, outer) = match leave {
            Side::Left => (svd.left_weighted(), svd.right_isometry.clone()),
            Side::Right => (svd.left_isometry.clone(), svd.right_weighted()),
        };
        self.arms[site][pos] = inner;
        self.arms[site][pos + 1] = outer;
        self.center = Center::Arm {
            site,
            pos: if leave == Side::Left { pos } else { pos + 1 },
        };
    }

    /// Brings the bin at arm position `l` (written `l` steps ago) to
    /// position 1, right behind the newest bin, and returns the center to the
    /// spine. No-op for `l = 1`.
    pub fn swap_feedback_bin(&mut self, site: usize, l: usize, policy: &TruncationPolicy) -> Result<()> {
        self.check_feedback_reach(site, l)?;
        if l == 1 {
            return Ok(());
        }
        self.move_center(Center::Arm { site, pos: l - 1 });
        for p in (1..l).rev() {
            self.swap_pair(site, p, policy, Side::Left);
            if p > 1 {
                self.shift_arm_in(site, p);
            }
        }
        self.move_center(Center::Spine(site));
        Ok(())
    }

    /// Inverse of [`swap_feedback_bin`](Self::swap_feedback_bin).
    pub fn unswap_feedback_bin(&mut self, site: usize, l: usize, policy: &TruncationPolicy) -> Result<()> {
        self.check_feedback_reach(site, l)?;
        if l == 1 {
            return Ok(());
        }
        self.move_center(Center::Arm { site, pos: 1 });
        for p in 1..l {
            self.swap_pair(site, p, policy, Side::Right);
        }
        self.move_center(Center::Spine(site));
        Ok(())
    }

    fn check_feedback_reach(&self, site: usize, l: usize) -> Result<()> {
        self.check_site(site)?;
        if l == 0 || self.arms[site].len() < l + 1 {
            return Err(Error::Contract(format!(
                "arm {site} holds {} bins, feedback at distance {l} needs {}",
                self.arms[site].len(),
                l + 1
            )));
        }
        Ok(())
    }

    /// Splits the spine tensor at `site` into an isometry on its spine bonds
    /// and a small core `(k, phys, res)` that the dissipative gates act on.
    fn spine_core(&self, site: usize) -> (DenseTensor, DenseTensor) {
        qr_orthogonalize(&self.spine[site], &Bipartition::new(vec![0, 2], vec![1, 3])).unwrap()
    }

    fn restore_spine(&mut self, site: usize, q: &DenseTensor, core: &DenseTensor) {
        // (l, r, n, res) -> (l, n, r, res)
        self.spine[site] = contract(q, core, &[(2, 0)]).unwrap().permute(&[0, 2, 1, 3]);
    }

    /// Three-body gate on `(feedback bin = arm[1], spin, future bin =
    /// arm[0])`, factor order as in [`crate::model::build_feedback_gate`].
    pub fn apply_feedback_gate(&mut self, site: usize, gate: &DenseTensor, policy: &TruncationPolicy) -> Result<()> {
        self.check_site(site)?;
        let d = self.bin_dim;
        self.check_gate(gate, 2 * d * d)?;
        if self.arms[site].len() < 2 {
            return Err(Error::Contract(format!("arm {site} needs a future and a feedback bin")));
        }
        self.move_center(Center::Spine(site));
        let (q, core) = self.spine_core(site);
        let x = contract(&core, &self.arms[site][0], &[(2, 0)]).unwrap();
        // (k, n, m_fut, m_fb, env)
        let theta = contract(&x, &self.arms[site][1], &[(3, 0)]).unwrap();
        let g = gate.clone().reshape(&[d, 2, d, d, 2, d]).unwrap();
        // (m_fb', n', m_fut', k, env)
        let theta = contract(&g, &theta, &[(3, 3), (4, 1), (5, 2)]).unwrap();
        let outer = self.split(&theta, Bipartition::new(vec![3, 1, 2], vec![0, 4]), policy, false);
        self.arms[site][1] = outer.right_isometry.clone();
        // (k, n, m_fut, a)
        let rest = outer.left_weighted();
        let inner = self.split(&rest, Bipartition::new(vec![0, 1], vec![2, 3]), policy, false);
        self.arms[site][0] = inner.right_isometry.clone();
        self.restore_spine(site, &q, &inner.left_weighted());
        self.center = Center::Spine(site);
        Ok(())
    }

    /// Two-body gate on `(spin, future bin = arm[0])`; the memoryless form of
    /// the dissipative step.
    pub fn apply_emission_gate(&mut self, site: usize, gate: &DenseTensor, policy: &TruncationPolicy) -> Result<()> {
        self.check_site(site)?;
        let d = self.bin_dim;
        self.check_gate(gate, 2 * d)?;
        if self.arms[site].is_empty() {
            return Err(Error::Contract(format!("arm {site} has no future bin")));
        }
        self.move_center(Center::Spine(site));
        let (q, core) = self.spine_core(site);
        // (k, n, m, out)
        let theta = contract(&core, &self.arms[site][0], &[(2, 0)]).unwrap();
        let g = gate.clone().reshape(&[2, d, 2, d]).unwrap();
        // (n', m', k, out)
        let theta = contract(&g, &theta, &[(2, 1), (3, 2)]).unwrap();
        let svd = self.split(&theta, Bipartition::new(vec![2, 0], vec![1, 3]), policy, false);
        self.arms[site][0] = svd.right_isometry.clone();
        self.restore_spine(site, &q, &svd.left_weighted());
        self.center = Center::Spine(site);
        Ok(())
    }

    // ---- dead bins ---------------------------------------------------------

    /// Drops every bin of `site`'s arm beyond the interaction window. Those
    /// bins are isometric toward the spine whenever the center is outside
    /// them, so removing them only relabels the environment basis: all
    /// remaining amplitudes and every future observable are unchanged.
    pub fn retire_dead_bins(&mut self, site: usize) -> usize {
        if let Center::Arm { site: s, pos } = self.center {
            if s == site && pos >= self.window {
                self.move_center(Center::Spine(site));
            }
        }
        let excess = self.arms[site].len().saturating_sub(self.window);
        self.arms[site].truncate(self.window);
        self.dropped_bins[site] += excess as u64;
        excess
    }

    /// Removes dead bins (beyond the interaction window) that have factored
    /// off: the outermost bin is dropped while the bond to its inner
    /// neighbour has Schmidt rank 1 once values below relative weight `tol`
    /// are discarded. Returns how many bins were removed.
    pub fn prune_dead_bins(&mut self, tol: f64) -> usize {
        let home = self.center;
        let policy = TruncationPolicy {
            max_bond: usize::MAX,
            cutoff: tol,
            track_discarded: true,
        };
        let mut pruned = 0;
        for site in 0..self.n_sites() {
            while self.arms[site].len() > self.window {
                let last = self.arms[site].len() - 1;
                let (theta, bip) = if last == 0 {
                    self.move_center(Center::Spine(site));
                    (self.spine[site].clone(), Bipartition::new(vec![0, 1, 2], vec![3]))
                } else {
                    self.move_center(Center::Arm { site, pos: last - 1 });
                    (self.arms[site][last - 1].clone(), Bipartition::new(vec![0, 1], vec![2]))
                };
                let sv = svd_truncate(&theta, &bip, usize::MAX, 0.0).unwrap().singular_values;
                if crate::tensor::truncation_rank(&sv, usize::MAX, tol) > 1 {
                    break;
                }
                let svd = self.split(&theta, bip, &policy, false);
                // the remaining right factor is a single normalized row that
                // only touches the dropped bin
                let kept = svd.left_weighted();
                if last == 0 {
                    self.spine[site] = kept;
                } else {
                    self.arms[site][last - 1] = kept;
                }
                self.arms[site].pop();
                self.dropped_bins[site] += 1;
                pruned += 1;
            }
        }
        if self.center != home {
            let target = match home {
                Center::Arm { site, pos } if pos >= self.arms[site].len() => Center::Spine(site),
                c => c,
            };
            self.move_center(target);
        }
        pruned
    }

    // ---- observables -------------------------------------------------------

    /// `<sigma^z>` at `site`, normalized by `<psi|psi>`. Moves the center;
    /// the state is unchanged.
    pub fn measure_sz(&mut self, site: usize) -> f64 {
        self.move_center(Center::Spine(site));
        let t = &self.spine[site];
        let shape = t.shape();
        let inner = shape[2] * shape[3];
        let (mut up, mut dn) = (0.0, 0.0);
        for a in 0..shape[0] {
            let base = a * 2 * inner;
            up += t.data()[base..base + inner].iter().map(|z| z.norm_sqr()).sum::<f64>();
            dn += t.data()[base + inner..base + 2 * inner].iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let norm = up + dn;
        if norm == 0.0 {
            0.0
        } else {
            (up - dn) / norm
        }
    }

    /// `<sigma^z_i>` for every site, sweeping the center along the spine.
    pub fn sz_profile(&mut self) -> Vec<f64> {
        let n = self.n_sites();
        let start = match self.center {
            Center::Spine(i) | Center::Arm { site: i, .. } => i,
        };
        let mut out = vec![0.0; n];
        if start <= n / 2 {
            for (i, v) in out.iter_mut().enumerate() {
                *v = self.measure_sz(i);
            }
        } else {
            for i in (0..n).rev() {
                out[i] = self.measure_sz(i);
            }
        }
        out
    }

    /// Mean photon number of the bin at arm position `pos`.
    pub fn bin_occupation(&mut self, site: usize, pos: usize) -> f64 {
        self.move_center(Center::Arm { site, pos });
        let t = &self.arms[site][pos];
        let (inn, d, out) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let mut num = 0.0;
        for a in 0..inn {
            for m in 0..d {
                let base = (a * d + m) * out;
                num += m as f64 * t.data()[base..base + out].iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
        num / t.norm_sqr()
    }

    /// Spin excitations plus photons in every bin still held in the arms.
    pub fn total_excitations(&mut self) -> f64 {
        let spins: f64 = self.sz_profile().iter().map(|s| 0.5 * (1.0 + s)).sum();
        let mut photons = 0.0;
        for site in 0..self.n_sites() {
            for pos in 0..self.arms[site].len() {
                photons += self.bin_occupation(site, pos);
            }
        }
        spins + photons
    }

    /// Von Neumann entropy across `bond`.
    pub fn bond_entropy(&mut self, bond: Bond) -> f64 {
        let (theta, bip) = match bond {
            Bond::Spine(b) => {
                self.move_center(Center::Spine(b));
                (self.spine[b].clone(), Bipartition::new(vec![0, 1, 3], vec![2]))
            }
            Bond::Arm { site, pos: 0 } => {
                self.move_center(Center::Spine(site));
                (self.spine[site].clone(), Bipartition::new(vec![0, 1, 2], vec![3]))
            }
            Bond::Arm { site, pos } => {
                self.move_center(Center::Arm { site, pos: pos - 1 });
                (self.arms[site][pos - 1].clone(), Bipartition::new(vec![0, 1], vec![2]))
            }
        };
        let sv = svd_truncate(&theta, &bip, usize::MAX, 0.0).unwrap().singular_values;
        entropy(&sv)
    }

    /// Largest deviation from the isometry condition over every tensor
    /// other than the center.
    pub fn canonical_defect(&self) -> f64 {
        let (cs, carm) = match self.center {
            Center::Spine(i) => (i, None),
            Center::Arm { site, pos } => (site, Some(pos)),
        };
        let mut worst = 0.0f64;
        for (i, t) in self.spine.iter().enumerate() {
            let out_axis = if i == cs {
                match carm {
                    None => continue,
                    Some(_) => 3,
                }
            } else if i < cs {
                2
            } else {
                0
            };
            worst = worst.max(isometry_defect(t, out_axis));
        }
        for (i, arm) in self.arms.iter().enumerate() {
            for (q, t) in arm.iter().enumerate() {
                let out_axis = match carm {
                    Some(p) if i == cs => {
                        if q == p {
                            continue;
                        } else if q < p {
                            2
                        } else {
                            0
                        }
                    }
                    _ => 0,
                };
                worst = worst.max(isometry_defect(t, out_axis));
            }
        }
        worst
    }

    // ---- checkpoint --------------------------------------------------------

    const MAGIC: &'static [u8; 8] = b"DTCCOMB\0";
    const VERSION: u32 = 1;

    /// Writes a little-endian binary checkpoint: header, bookkeeping, then
    /// every tensor as `rank, extents..., (re, im)...`.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        put_u32(&mut w, Self::VERSION)?;
        put_u32(&mut w, self.n_sites() as u32)?;
        put_u32(&mut w, self.bin_dim as u32)?;
        put_u32(&mut w, self.window as u32)?;
        let (tag, a, b) = match self.center {
            Center::Spine(i) => (0u32, i as u32, 0u32),
            Center::Arm { site, pos } => (1, site as u32, pos as u32),
        };
        put_u32(&mut w, tag)?;
        put_u32(&mut w, a)?;
        put_u32(&mut w, b)?;
        w.write_all(&self.accumulated_truncation.to_le_bytes())?;
        w.write_all(&self.swap_truncation.to_le_bytes())?;
        for site in 0..self.n_sites() {
            w.write_all(&self.bin_clock[site].to_le_bytes())?;
            w.write_all(&self.dropped_bins[site].to_le_bytes())?;
            put_tensor(&mut w, &self.spine[site])?;
            put_u32(&mut w, self.arms[site].len() as u32)?;
            for t in &self.arms[site] {
                put_tensor(&mut w, t)?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = get_u32(&mut r)?;
        if version != Self::VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = get_u32(&mut r)? as usize;
        let bin_dim = get_u32(&mut r)? as usize;
        let window = get_u32(&mut r)? as usize;
        let tag = get_u32(&mut r)?;
        let a = get_u32(&mut r)? as usize;
        let b = get_u32(&mut r)? as usize;
        let center = match tag {
            0 => Center::Spine(a),
            1 => Center::Arm { site: a, pos: b },
            _ => return Err(Error::Checkpoint(format!("bad center tag {tag}"))),
        };
        let accumulated_truncation = get_f64(&mut r)?;
        let swap_truncation = get_f64(&mut r)?;
        let mut spine = Vec::with_capacity(n);
        let mut arms = Vec::with_capacity(n);
        let mut bin_clock = Vec::with_capacity(n);
        let mut dropped_bins = Vec::with_capacity(n);
        for _ in 0..n {
            bin_clock.push(get_u64(&mut r)?);
            dropped_bins.push(get_u64(&mut r)?);
            spine.push(get_tensor(&mut r)?);
            let len = get_u32(&mut r)? as usize;
            arms.push((0..len).map(|_| get_tensor(&mut r)).collect::<Result<Vec<_>>>()?);
        }
        Ok(Self {
            spine,
            arms,
            center,
            bin_dim,
            window,
            accumulated_truncation,
            swap_truncation,
            bin_clock,
            dropped_bins,
        })
    }

    /// Full state vector over `(spins..., bins of arm 0 inner→outer, ...,
    /// env legs)`. Only for tiny networks in tests.
    pub fn to_dense(&self) -> DenseTensor {
        let n = self.n_sites();
        let mut acc = self.site_block(0);
        // acc axes: (phys/arm axes..., right bond)
        for i in 1..n {
            let block = self.site_block(i);
            let last = acc.rank() - 1;
            acc = contract(&acc, &block, &[(last, 0)]).unwrap();
        }
        // drop the trailing right bond of dimension 1
        let mut shape = acc.shape().to_vec();
        shape.pop();
        // reorder: spins first, then every arm's legs
        let per_site: Vec<usize> = (0..n).map(|i| 1 + self.arms[i].len() + 1).collect();
        let mut spins = Vec::new();
        let mut rest = Vec::new();
        let mut offset = 0;
        for &k in &per_site {
            spins.push(offset);
            rest.extend(offset + 1..offset + k);
            offset += k;
        }
        let acc = acc.reshape(&shape).unwrap();
        let perm: Vec<usize> = spins.into_iter().chain(rest).collect();
        acc.permute(&perm)
    }

    /// Spine tensor with its arm contracted in: axes
    /// `(left, phys, bins..., env, right)`; the leading left bond is
    /// contracted away at site 0.
    fn site_block(&self, i: usize) -> DenseTensor {
        let mut t = self.spine[i].clone(); // (l, n, r, res)
        t = t.permute(&[0, 1, 3, 2]); // (l, n, res, r)
        for bin in &self.arms[i] {
            // move the open bond (res or previous outer) to be contracted
            let k = t.rank();
            // open bond sits at position k-2, right bond at k-1
            t = contract(&t, bin, &[(k - 2, 0)]).unwrap();
            // now (..., r, m, out): restore (..., m, out, r)
            let k = t.rank();
            let mut perm: Vec<usize> = (0..k - 3).collect();
            perm.extend([k - 2, k - 1, k - 3]);
            t = t.permute(&perm);
        }
        if i == 0 {
            let shape = t.shape()[1..].to_vec();
            t = t.reshape(&shape).unwrap();
        }
        t
    }
}

fn vacuum_bin(bond: usize, bin_dim: usize) -> DenseTensor {
    let mut t = DenseTensor::zeros(&[bond, bin_dim, bond]);
    for a in 0..bond {
        t.set(&[a, 0, a], ONE);
    }
    t
}

fn isometry_defect(t: &DenseTensor, out_axis: usize) -> f64 {
    let mut left: Vec<usize> = (0..t.rank()).filter(|&k| k != out_axis).collect();
    left.sort_unstable();
    let perm: Vec<usize> = left.iter().copied().chain([out_axis]).collect();
    let m: usize = left.iter().map(|&k| t.shape()[k]).product();
    let mat = t.permute(&perm).reshape(&[m, t.shape()[out_axis]]).unwrap();
    mat.isometry_defect()
}

/// `-sum p ln p` over the normalized Schmidt weights.
pub fn entropy(singular_values: &[f64]) -> f64 {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0.0;
    }
    singular_values
        .iter()
        .map(|s| s * s / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn put_tensor<W: Write>(w: &mut W, t: &DenseTensor) -> Result<()> {
    put_u32(w, t.rank() as u32)?;
    for &e in t.shape() {
        put_u32(w, e as u32)?;
    }
    for z in t.data() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

fn get_tensor<R: Read>(r: &mut R) -> Result<DenseTensor> {
    let rank = get_u32(r)? as usize;
    if rank > 16 {
        return Err(Error::Checkpoint(format!("implausible tensor rank {rank}")));
    }
    let shape = (0..rank).map(|_| get_u32(r).map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let re = get_f64(r)?;
        let im = get_f64(r)?;
        data.push(C64::new(re, im));
    }
    DenseTensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
}
