use dtc_core::comb::{Bond, Center, CombMps, TruncationPolicy};
use dtc_core::dense::apply_local;
use dtc_core::engine::{run_floquet, staggered_magnetization, DeadBinPolicy, RunConfig};
use dtc_core::model::{
    build_emission_gate, build_feedback_gate, build_kick_slice, sample_disorder, ModelParams,
};
use dtc_core::tensor::{expm_antihermitian, pauli, DenseTensor, C64, ONE, ZERO};
use faer::{MatRef, Side};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const UP: [C64; 2] = [ONE, ZERO];
const DOWN: [C64; 2] = [ZERO, ONE];

fn random_unitary(dim: usize, rng: &mut ChaCha8Rng) -> DenseTensor {
    let data: Vec<C64> = (0..dim * dim)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let a = DenseTensor::new(vec![dim, dim], data).unwrap();
    let mut g = a.clone();
    g.data_mut()
        .iter_mut()
        .zip(a.adjoint().data())
        .for_each(|(x, y)| *x -= y);
    expm_antihermitian(&g, 1e-10).unwrap()
}

fn spins_only(spins: &[[C64; 2]]) -> CombMps {
    CombMps::init_product(spins, 2, 0)
}

fn dense_vector(mps: &CombMps) -> Vec<C64> {
    mps.to_dense().into_data()
}

/// `|<a|b>|` close to 1 and `|a| = |b|`: equal up to a global phase.
fn assert_same_state(a: &[C64], b: &[C64], tol: f64) {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    assert!(diff < tol, "states differ by {diff:e}");
}

fn excited_params() -> ModelParams {
    let mut p = ModelParams::new(1);
    p.epsilon = p.omega();
    p.jz = 0.0;
    p.jx = 0.0;
    p.hx = 0.0;
    p
}

#[test]
fn neel_initial_state() {
    let p = ModelParams::new(4);
    let mut s = CombMps::init_neel_vacuum(&p);
    assert_eq!(s.measure_sz(0), 1.0);
    assert_eq!(s.measure_sz(1), -1.0);
    assert!((s.norm_sqr() - 1.0).abs() < 1e-15);
    assert_eq!(staggered_magnetization(&s.sz_profile()), 1.0);
    for i in 0..4 {
        assert_eq!(s.arm_len(i), p.bins_per_delay);
    }
    let p3 = ModelParams::new(2).with_bins_per_delay(3);
    let s3 = CombMps::init_neel_vacuum(&p3);
    assert_eq!(s3.arm_len(1), 3);
    assert_eq!(s3.max_bond(), 1);
}

#[test]
fn identity_gate_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = spins_only(&[UP, DOWN, UP]);
    let policy = TruncationPolicy::exact();
    let u = random_unitary(4, &mut rng);
    s.apply_spine_gate(&u, &[0, 1], &policy).unwrap();
    let before = dense_vector(&s);
    s.apply_spine_gate(&DenseTensor::identity(4), &[1, 2], &policy).unwrap();
    s.apply_spine_gate(&DenseTensor::identity(2), &[2], &policy).unwrap();
    assert_same_state(&before, &dense_vector(&s), 1e-13);
    assert_eq!(s.accumulated_truncation(), 0.0);
}

#[test]
fn sigma_x_flips_a_spin() {
    let mut s = spins_only(&[UP, DOWN]);
    s.apply_spine_gate(&pauli::x(), &[0], &TruncationPolicy::exact()).unwrap();
    assert_eq!(s.measure_sz(0), -1.0);
    assert_eq!(s.measure_sz(1), -1.0);
}

#[test]
fn two_site_gate_matches_dense_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = random_unitary(4, &mut rng);
    let mut s = spins_only(&[UP, DOWN]);
    s.apply_spine_gate(&u, &[0, 1], &TruncationPolicy::exact()).unwrap();
    // |up, down> is basis index 1
    let want: Vec<C64> = (0..4).map(|r| u.get(&[r, 1])).collect();
    assert_same_state(&dense_vector(&s), &want, 1e-12);
}

#[test]
fn bad_gate_requests_are_rejected() {
    let mut s = spins_only(&[UP, DOWN, UP]);
    let policy = TruncationPolicy::exact();
    assert!(s.apply_spine_gate(&DenseTensor::identity(4), &[0, 2], &policy).is_err());
    assert!(s.apply_spine_gate(&DenseTensor::identity(4), &[1, 0], &policy).is_err());
    assert!(s.apply_spine_gate(&DenseTensor::identity(2), &[0, 1], &policy).is_err());
    assert!(s.apply_spine_gate(&DenseTensor::identity(2), &[3], &policy).is_err());
    assert!(s.apply_feedback_gate(0, &DenseTensor::identity(8), &policy).is_err());
    assert!(s.swap_feedback_bin(0, 2, &policy).is_err());
}

#[test]
fn appending_vacuum_bins_leaves_observables_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = spins_only(&[UP, DOWN, UP]);
    let policy = TruncationPolicy::exact();
    s.apply_spine_gate(&random_unitary(4, &mut rng), &[1, 2], &policy).unwrap();
    let before = s.sz_profile();
    s.append_bin(1);
    s.append_bin(1);
    s.append_bin(2);
    assert_eq!(s.arm_len(1), 2);
    assert_eq!(s.bin_clock(1), 2);
    assert!((s.norm_sqr() - 1.0).abs() < 1e-13);
    for (a, b) in before.iter().zip(s.sz_profile()) {
        assert!((a - b).abs() < 1e-13);
    }
    assert_eq!(s.bin_occupation(1, 0), 0.0);
}

#[test]
fn emission_step_puts_sin_squared_in_the_bin() {
    let mut p = excited_params().with_gamma(0.0);
    p.gamma_l = 0.7;
    let policy = TruncationPolicy::exact();
    let want = (p.gamma_l * p.dt).sqrt().sin().powi(2);

    let mut s = CombMps::init_product(&[UP], 2, 0);
    s.append_bin(0);
    s.apply_emission_gate(0, &build_emission_gate(&p).unwrap(), &policy).unwrap();
    assert!((s.bin_occupation(0, 0) - want).abs() < 1e-14);

    // the three-body gate reduces to the same rotation when the mirror is off
    let mut s = CombMps::init_product(&[UP], 2, 1);
    s.append_bin(0);
    s.apply_feedback_gate(0, &build_feedback_gate(&p, 0).unwrap(), &policy).unwrap();
    assert!((s.bin_occupation(0, 0) - want).abs() < 1e-14);
    assert!(s.bin_occupation(0, 1).abs() < 1e-14);
}

#[test]
fn decoupled_feedback_gate_is_a_no_op() {
    let p = excited_params();
    let mut s = CombMps::init_product(&[UP], 2, 1);
    s.append_bin(0);
    let before = dense_vector(&s);
    s.apply_feedback_gate(0, &build_feedback_gate(&p, 0).unwrap(), &TruncationPolicy::exact())
        .unwrap();
    assert_same_state(&before, &dense_vector(&s), 1e-15);
}

/// Spin plus four bins, all entangled, so that bin reordering is visible.
fn entangled_arm(rng: &mut ChaCha8Rng, bins: usize) -> CombMps {
    let mut s = CombMps::init_product(&[UP], 2, 0);
    let policy = TruncationPolicy::exact();
    for _ in 0..bins {
        s.append_bin(0);
        s.apply_emission_gate(0, &random_unitary(4, rng), &policy).unwrap();
    }
    s
}

#[test]
fn swap_network_matches_permutation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut s = entangled_arm(&mut rng, 5);
    // axes: (spin, bin 0 .. bin 4, env)
    let before = s.to_dense();
    s.swap_feedback_bin(0, 3, &TruncationPolicy::exact()).unwrap();
    assert_eq!(s.center(), Center::Spine(0));
    let want = before.permute(&[0, 1, 4, 2, 3, 5, 6]);
    assert_same_state(want.data(), s.to_dense().data(), 1e-10);
    assert!(s.canonical_defect() < 1e-10);
}

#[test]
fn swap_then_unswap_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut s = entangled_arm(&mut rng, 5);
    let policy = TruncationPolicy::exact();
    let before = dense_vector(&s);
    s.swap_feedback_bin(0, 4, &policy).unwrap();
    s.unswap_feedback_bin(0, 4, &policy).unwrap();
    assert_same_state(&before, &dense_vector(&s), 1e-12);
    // l = 1 needs no swaps at all
    let center = s.center();
    s.swap_feedback_bin(0, 1, &policy).unwrap();
    assert_eq!(s.center(), center);
    assert_same_state(&before, &dense_vector(&s), 1e-12);
}

#[test]
fn half_period_kick_flips_the_neel_state() {
    let mut p = ModelParams::new(4);
    p.epsilon = 0.0;
    let kick = build_kick_slice(&p).unwrap();
    let mut s = CombMps::init_neel_vacuum(&p);
    let policy = TruncationPolicy::exact();
    for _ in 0..p.steps_per_half().unwrap() {
        for i in 0..4 {
            s.apply_spine_gate(&kick, &[i], &policy).unwrap();
        }
    }
    let sz = s.sz_profile();
    assert!((sz[0] + 1.0).abs() < 1e-10 && (sz[1] - 1.0).abs() < 1e-10);
}

#[test]
fn untouched_vacuum_bins_are_pruned() {
    let mut s = CombMps::init_product(&[UP, DOWN], 2, 1);
    for _ in 0..4 {
        s.append_bin(0);
    }
    let before = s.sz_profile();
    assert_eq!(s.prune_dead_bins(1e-12), 4);
    assert_eq!(s.arm_len(0), 1);
    assert_eq!(s.sz_profile(), before);
    assert_eq!(s.dropped_bins(0), 4);
}

#[test]
fn entangled_dead_bin_is_retained() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = CombMps::init_product(&[UP], 2, 1);
    let policy = TruncationPolicy::exact();
    // window bin entangles, then a fresh bin pushes it out of the window
    s.apply_emission_gate(0, &random_unitary(4, &mut rng), &policy).unwrap();
    s.append_bin(0);
    assert_eq!(s.prune_dead_bins(1e-12), 0);
    assert_eq!(s.arm_len(0), 2);
}

#[test]
fn dead_bin_policies_agree() {
    let mut p = ModelParams::new(2).with_gamma(1.0).with_bins_per_delay(2);
    p.period = 20.0 * p.dt;
    p.cutoff = 0.0;
    let d = sample_disorder(&p, 0);
    let run = |dead_bins| {
        let rc = RunConfig {
            periods: 3,
            dead_bins,
            ..RunConfig::default()
        };
        run_floquet(&p, &d, &rc).unwrap()
    };
    let keep = run(DeadBinPolicy::Keep);
    let prune = run(DeadBinPolicy::Prune { tol: 1e-14 });
    let fold = run(DeadBinPolicy::Fold);
    for k in 0..keep.len() {
        assert!((keep.m_values[k] - prune.m_values[k]).abs() < 1e-8);
        assert!((keep.m_values[k] - fold.m_values[k]).abs() < 1e-8);
    }
}

#[test]
fn entropy_of_product_and_bell_states() {
    let mut s = spins_only(&[UP, UP]);
    assert_eq!(s.bond_entropy(Bond::Spine(0)), 0.0);
    let h = {
        let r = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        DenseTensor::from_rows(&[&[r, r], &[r, -r]]).unwrap()
    };
    let cnot = DenseTensor::from_rows(&[
        &[ONE, ZERO, ZERO, ZERO],
        &[ZERO, ONE, ZERO, ZERO],
        &[ZERO, ZERO, ZERO, ONE],
        &[ZERO, ZERO, ONE, ZERO],
    ])
    .unwrap();
    let policy = TruncationPolicy::exact();
    s.apply_spine_gate(&h, &[0], &policy).unwrap();
    s.apply_spine_gate(&cnot, &[0, 1], &policy).unwrap();
    assert!((s.bond_entropy(Bond::Spine(0)) - std::f64::consts::LN_2).abs() < 1e-12);
}

/// Entropy of the first `k` factors of a pure state, via the reduced
/// density matrix.
fn dense_entropy(psi: &[C64], k_dim: usize) -> f64 {
    let rest = psi.len() / k_dim;
    let m = MatRef::from_row_major_slice(psi, k_dim, rest);
    let rho = m * m.adjoint();
    let eig = rho.self_adjoint_eigen(Side::Lower).unwrap();
    (0..k_dim)
        .map(|k| eig.S()[k].re)
        .filter(|&p| p > 1e-15)
        .map(|p| -p * p.ln())
        .sum()
}

#[test]
fn entropy_matches_reduced_density_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut s = spins_only(&[UP, DOWN, UP, DOWN]);
    let policy = TruncationPolicy::exact();
    for _ in 0..3 {
        for b in 0..3 {
            s.apply_spine_gate(&random_unitary(4, &mut rng), &[b, b + 1], &policy).unwrap();
        }
    }
    let psi = dense_vector(&s);
    for b in 0..3 {
        let want = dense_entropy(&psi, 1 << (b + 1));
        assert!((s.bond_entropy(Bond::Spine(b)) - want).abs() < 1e-10);
    }
}

#[test]
fn arm_entropy_matches_reduced_density_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut s = entangled_arm(&mut rng, 3);
    // (spin, b0, b1, b2, env): the bond in front of b1 separates (spin, b0)
    let psi = dense_vector(&s);
    let want = dense_entropy(&psi, 4);
    assert!((s.bond_entropy(Bond::Arm { site: 0, pos: 1 }) - want).abs() < 1e-10);
    let want0 = dense_entropy(&psi, 2);
    assert!((s.bond_entropy(Bond::Arm { site: 0, pos: 0 }) - want0).abs() < 1e-10);
}

#[test]
fn feedback_gates_conserve_excitations() {
    let mut p = excited_params().with_gamma(3.0).with_bins_per_delay(2);
    p.n_sites = 2;
    let policy = TruncationPolicy::exact();
    let mut s = CombMps::init_product(&[UP, UP], 2, 2);
    let gates: Vec<_> = (0..2).map(|i| build_feedback_gate(&p, i).unwrap()).collect();
    for _ in 0..6 {
        for site in 0..2 {
            s.append_bin(site);
            s.swap_feedback_bin(site, 2, &policy).unwrap();
            s.apply_feedback_gate(site, &gates[site], &policy).unwrap();
            s.unswap_feedback_bin(site, 2, &policy).unwrap();
        }
        let total = s.total_excitations();
        assert!((total - 2.0).abs() < 1e-12, "total {total}");
        assert!(s.canonical_defect() < 1e-10);
    }
}

#[test]
fn mirror_slows_the_decay_of_an_excitation() {
    // with phi = pi the returning field keeps the spin partially excited
    let mut p = excited_params().with_gamma(1.0);
    p.bin_dim = 2;
    let mut q = p.clone();
    q.gamma_l = p.gamma_l + p.gamma_r;
    q.gamma_r = 0.0;
    let policy = TruncationPolicy::exact();
    let fb = build_feedback_gate(&p, 0).unwrap();
    let em = build_emission_gate(&q).unwrap();
    let mut a = CombMps::init_product(&[UP], 2, 1);
    let mut b = CombMps::init_product(&[UP], 2, 1);
    for _ in 0..2000 {
        a.append_bin(0);
        a.apply_feedback_gate(0, &fb, &policy).unwrap();
        a.retire_dead_bins(0);
        b.append_bin(0);
        b.apply_emission_gate(0, &em, &policy).unwrap();
        b.retire_dead_bins(0);
    }
    let pa = 0.5 * (1.0 + a.measure_sz(0));
    let pb = 0.5 * (1.0 + b.measure_sz(0));
    assert!(pa > pb, "feedback {pa} vs markov {pb}");
}

#[test]
fn norm_loss_is_bounded_by_discarded_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut s = spins_only(&[UP, DOWN, UP, DOWN, UP, DOWN]);
    let policy = TruncationPolicy {
        max_bond: 2,
        cutoff: 0.0,
        track_discarded: true,
    };
    for _ in 0..4 {
        for b in 0..5 {
            s.apply_spine_gate(&random_unitary(4, &mut rng), &[b, b + 1], &policy).unwrap();
        }
    }
    assert!(s.accumulated_truncation() > 0.0);
    assert!(1.0 - s.norm_sqr() <= s.accumulated_truncation() + 1e-12);
    assert!(s.max_bond() <= 2);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut s = entangled_arm(&mut rng, 3);
    s.move_center(Center::Arm { site: 0, pos: 2 });
    let mut bytes = Vec::new();
    s.write_checkpoint(&mut bytes).unwrap();
    let t = CombMps::read_checkpoint(bytes.as_slice()).unwrap();
    assert_eq!(t.center(), s.center());
    assert_eq!(t.to_dense(), s.to_dense());
    let mut again = Vec::new();
    t.write_checkpoint(&mut again).unwrap();
    assert_eq!(bytes, again);
    bytes[0] = b'X';
    assert!(CombMps::read_checkpoint(bytes.as_slice()).is_err());
}

#[derive(Clone, Debug)]
enum Op {
    One(usize),
    Two(usize),
}

fn op_strategy(n: usize) -> impl Strategy<Value = Op> {
    prop_oneof![(0..n).prop_map(Op::One), (0..n - 1).prop_map(Op::Two)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_circuits_match_statevector(ops in prop::collection::vec(op_strategy(3), 1..30), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = spins_only(&[UP, DOWN, UP]);
        let policy = TruncationPolicy::exact();
        let mut psi = vec![ZERO; 8];
        psi[0b010] = ONE;
        let dims = [2, 2, 2];
        for op in ops {
            match op {
                Op::One(i) => {
                    let u = random_unitary(2, &mut rng);
                    s.apply_spine_gate(&u, &[i], &policy).unwrap();
                    apply_local(&mut psi, &dims, &[i], &u);
                }
                Op::Two(b) => {
                    let u = random_unitary(4, &mut rng);
                    s.apply_spine_gate(&u, &[b, b + 1], &policy).unwrap();
                    apply_local(&mut psi, &dims, &[b, b + 1], &u);
                }
            }
            prop_assert!(s.canonical_defect() < 1e-8);
        }
        let got = dense_vector(&s);
        let diff: f64 = got.iter().zip(&psi).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-10, "max amplitude error {diff:e}");
    }

    #[test]
    fn center_moves_preserve_the_state(targets in prop::collection::vec((0usize..2, 0usize..4), 1..12)) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut s = CombMps::init_product(&[UP, DOWN], 2, 0);
        let policy = TruncationPolicy::exact();
        for site in 0..2 {
            for _ in 0..4 {
                s.append_bin(site);
                s.apply_emission_gate(site, &random_unitary(4, &mut rng), &policy).unwrap();
            }
        }
        s.apply_spine_gate(&random_unitary(4, &mut rng), &[0, 1], &policy).unwrap();
        let before = dense_vector(&s);
        for (site, pos) in targets {
            let target = if pos == 0 { Center::Spine(site) } else { Center::Arm { site, pos: pos - 1 } };
            s.move_center(target);
            prop_assert_eq!(s.center(), target);
            prop_assert!(s.canonical_defect() < 1e-10);
        }
        let after = dense_vector(&s);
        let diff: f64 = before.iter().zip(&after).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-12);
    }
}
