#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use racig_core::diffusion::{ControlConfig, PreserveMode};
use racig_core::inject::{
    branch_terms, build_branch, extract_disentangled, fuse_face_body, hmsi_step, merge_branches,
    BranchInputs, CharacterFeatures, DisentangledExtractor, InjectConfig, LatentGrid, MergeMode,
    Scene, SkeletonEncoder, SubjectMasks,
};
use racig_core::kernels::{AttentionWeights, Tensor};
use racig_core::msdb::{fixtures_gen, FixtureSpec, Raster};
use racig_core::rng::SplitMix64;

const D: usize = 16;

fn random(rng: &mut SplitMix64, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(vec![rows, cols], |_| rng.uniform(-1.0, 1.0)).unwrap()
}

fn features(rng: &mut SplitMix64, k: usize) -> CharacterFeatures<f64> {
    CharacterFeatures {
        f_face: random(rng, 4, D),
        f_body: random(rng, 4, D),
        source_char: k,
    }
}

/// Scalar reference for one attention: softmax(q k^T / sqrt(d)) v.
fn oracle_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = q[0].len() as f64;
    q.iter()
        .map(|qi| {
            let logits: Vec<f64> = k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt()).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            (0..v[0].len()).map(|c| e.iter().zip(v).map(|(w, vj)| w / s * vj[c]).sum()).collect()
        })
        .collect()
}

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn mul(a: &[Vec<f64>], b: &Tensor<f64>) -> Vec<Vec<f64>> {
    a.iter()
        .map(|r| (0..b.cols()).map(|j| r.iter().enumerate().map(|(i, x)| x * b.at(i, j)).sum()).collect())
        .collect()
}

struct Setup {
    grid: LatentGrid,
    weights: AttentionWeights<f64>,
    z: Tensor<f64>,
    text: Tensor<f64>,
    skeleton: Tensor<f64>,
}

fn setup(seed: u64, h: usize, w: usize) -> Setup {
    let grid = LatentGrid::new(h, w).unwrap();
    let mut rng = SplitMix64::new(seed);
    Setup {
        grid,
        weights: AttentionWeights::from_seed(seed, D, D).unwrap(),
        z: random(&mut rng, grid.cells(), D),
        text: random(&mut rng, 5, D),
        skeleton: random(&mut rng, grid.cells(), D),
    }
}

fn halves(grid: LatentGrid) -> (SubjectMasks<f64>, SubjectMasks<f64>) {
    let n = grid.cells();
    let left = |i: usize| (i % grid.w()) < grid.w() / 2;
    let top = |i: usize| (i / grid.w()) < grid.h() / 2;
    let mk = |side: bool| {
        let face = (0..n).map(|i| (left(i) == side && top(i)) as u8 as f64).collect();
        let body = (0..n).map(|i| (left(i) == side && !top(i)) as u8 as f64).collect();
        SubjectMasks::new(grid, face, body).unwrap()
    };
    (mk(true), mk(false))
}

#[test]
fn identity_term_matches_scalar_oracle() {
    let s = setup(3, 4, 6);
    let mut rng = SplitMix64::new(4);
    let f = features(&mut rng, 0);
    let (m, _) = halves(s.grid);
    let got = fuse_face_body(&s.z, &f, &m, &s.weights).unwrap();

    let q = mul(&rows(&s.z), &s.weights.w_q);
    let face = oracle_attention(&q, &mul(&rows(&f.f_face), &s.weights.w_k_prime), &mul(&rows(&f.f_face), &s.weights.w_v_prime));
    let body = oracle_attention(&q, &mul(&rows(&f.f_body), &s.weights.w_k_prime), &mul(&rows(&f.f_body), &s.weights.w_v_prime));
    for p in 0..s.grid.cells() {
        for c in 0..D {
            let want = m.face()[p] * face[p][c] + m.body()[p] * body[p][c];
            assert!((got.at(p, c) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn full_face_mask_recovers_face_path() {
    let s = setup(5, 3, 3);
    let mut rng = SplitMix64::new(6);
    let f = features(&mut rng, 0);
    let m = SubjectMasks::full_face(s.grid);
    let fused = fuse_face_body(&s.z, &f, &m, &s.weights).unwrap();
    let face_only = racig_core::kernels::image_attention(&s.z, &f.f_face, &s.weights).unwrap();
    assert_eq!(fused, face_only);
}

#[test]
fn branch_is_sum_of_terms() {
    let s = setup(7, 4, 4);
    let mut rng = SplitMix64::new(8);
    let f = features(&mut rng, 0);
    let (m, _) = halves(s.grid);
    let inputs = BranchInputs { z_t: &s.z, c_text: &s.text, skeleton: &s.skeleton, weights: &s.weights };
    let terms = branch_terms(&inputs, &f, &m).unwrap();
    let b = build_branch(&inputs, &f, &m).unwrap();
    let want = s.z.add(&terms.text).unwrap().add(&terms.identity).unwrap().add(&terms.skeleton).unwrap();
    assert_eq!(b, want);
    assert_eq!(terms.skeleton, s.skeleton);
}

#[test]
fn single_subject_full_mask_collapses_to_branch() {
    for seed in 0..20 {
        let s = setup(seed, 3, 5);
        let mut rng = SplitMix64::new(seed + 100);
        let f = features(&mut rng, 0);
        let m = SubjectMasks::full_face(s.grid);
        let inputs = BranchInputs { z_t: &s.z, c_text: &s.text, skeleton: &s.skeleton, weights: &s.weights };
        let single = build_branch(&inputs, &f, &m).unwrap();
        let scene = Scene { grid: s.grid, masks: vec![m], skeleton: s.skeleton.clone() };
        for mode in [MergeMode::Normalized, MergeMode::PaperLiteral] {
            let cfg = InjectConfig { weights: s.weights.clone(), merge_mode: mode };
            let out = hmsi_step(&cfg, &scene, &[0], std::slice::from_ref(&f), &s.z, &s.text).unwrap();
            assert_eq!(out.latent, single);
            assert_eq!(out.branches[0], single);
        }
    }
}

#[test]
fn branches_match_build_branch_bitwise() {
    let s = setup(11, 4, 6);
    let mut rng = SplitMix64::new(12);
    let feats = vec![features(&mut rng, 0), features(&mut rng, 1)];
    let (a, b) = halves(s.grid);
    let scene = Scene { grid: s.grid, masks: vec![a, b], skeleton: s.skeleton.clone() };
    let cfg = InjectConfig { weights: s.weights.clone(), merge_mode: MergeMode::Normalized };
    let out = hmsi_step(&cfg, &scene, &[1, 0], &feats, &s.z, &s.text).unwrap();
    let inputs = BranchInputs { z_t: &s.z, c_text: &s.text, skeleton: &s.skeleton, weights: &s.weights };
    assert_eq!(out.branches[0], build_branch(&inputs, &feats[0], &scene.masks[1]).unwrap());
    assert_eq!(out.branches[1], build_branch(&inputs, &feats[1], &scene.masks[0]).unwrap());
    assert_eq!(out.diagnostics[0].region, 1);
}

#[test]
fn swapping_assignment_equals_swapping_features() {
    let s = setup(13, 4, 6);
    let mut rng = SplitMix64::new(14);
    let a = features(&mut rng, 0);
    let b = features(&mut rng, 1);
    let (ml, mr) = halves(s.grid);
    let scene = Scene { grid: s.grid, masks: vec![ml, mr], skeleton: s.skeleton.clone() };
    let cfg = InjectConfig { weights: s.weights.clone(), merge_mode: MergeMode::Normalized };
    let x = hmsi_step(&cfg, &scene, &[1, 0], &[a.clone(), b.clone()], &s.z, &s.text).unwrap();
    let y = hmsi_step(&cfg, &scene, &[0, 1], &[b, a], &s.z, &s.text).unwrap();
    assert_eq!(x.latent, y.latent);
}

#[test]
fn changing_one_crop_only_touches_its_region() {
    let set = fixtures_gen(&FixtureSpec { count: 10, ..FixtureSpec::default() }).unwrap();
    let grid = LatentGrid::new(32, 56).unwrap();
    let weights = AttentionWeights::from_seed(1, D, D).unwrap();
    let skel = SkeletonEncoder::new(2, D).unwrap();
    let control = ControlConfig::new(1.0, D).unwrap();
    let ex = DisentangledExtractor::new(3, 4, D).unwrap();
    for (i, rec) in set.records.iter().enumerate() {
        let scene = Scene::from_record(rec, grid, &skel, &control, PreserveMode::PaperLiteral).unwrap();
        let mut rng = SplitMix64::new(i as u64);
        let z = random(&mut rng, grid.cells(), D);
        let text = random(&mut rng, 6, D);
        let feats: Vec<_> = set
            .refs
            .iter()
            .enumerate()
            .map(|(k, (f, b))| extract_disentangled(f, b, &ex, k).unwrap())
            .collect();
        let other = Raster::from_fn(16, 16, |x, y| (x * 13 + y * 7) as u8);
        let mut changed = feats.clone();
        changed[0] = extract_disentangled(&other, &set.refs[0].1, &ex, 0).unwrap();
        let cfg = InjectConfig { weights: weights.clone(), merge_mode: MergeMode::Normalized };
        let perm = [1, 0];
        let a = hmsi_step(&cfg, &scene, &perm, &feats, &z, &text).unwrap().latent;
        let b = hmsi_step(&cfg, &scene, &perm, &changed, &z, &text).unwrap().latent;
        let union = scene.masks[perm[0]].union();
        let mut touched = 0;
        for p in 0..grid.cells() {
            if union[p] == 0.0 {
                assert_eq!(a.row(p), b.row(p), "record {i} cell {p}");
            } else if a.row(p) != b.row(p) {
                touched += 1;
            }
        }
        assert!(touched > 0, "record {i}: change had no effect");
    }
}

#[test]
fn merge_errors() {
    let base = Tensor::<f64>::zeros(vec![2, 2]).unwrap();
    assert!(merge_branches(&[], &[], &base, MergeMode::Normalized).is_err());
    let u = [1.0, 0.0];
    assert!(merge_branches(std::slice::from_ref(&base), &[&u, &u], &base, MergeMode::Normalized).is_err());
    assert!(merge_branches(std::slice::from_ref(&base), &[&u[..1]], &base, MergeMode::Normalized).is_err());
}

#[test]
fn hmsi_rejects_non_bijection() {
    let s = setup(1, 2, 4);
    let (a, b) = halves(s.grid);
    let scene = Scene { grid: s.grid, masks: vec![a, b], skeleton: s.skeleton.clone() };
    let cfg = InjectConfig { weights: s.weights.clone(), merge_mode: MergeMode::Normalized };
    let mut rng = SplitMix64::new(2);
    let feats = vec![features(&mut rng, 0), features(&mut rng, 1)];
    assert!(hmsi_step(&cfg, &scene, &[0, 0], &feats, &s.z, &s.text).is_err());
    assert!(hmsi_step(&cfg, &scene, &[0], &feats, &s.z, &s.text).is_err());
}

fn mask_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64], n)
}

proptest! {
    #[test]
    fn identical_branches_merge_to_themselves(
        seed in any::<u64>(),
        k in 1usize..5,
        masks in prop::collection::vec(mask_strategy(12), 4),
    ) {
        let mut rng = SplitMix64::new(seed);
        let b = random(&mut rng, 12, 3);
        let branches = vec![b.clone(); k];
        let unions: Vec<&[f64]> = masks.iter().take(k).map(|m| m.as_slice()).collect();
        let out = merge_branches(&branches, &unions, &b, MergeMode::Normalized).unwrap();
        prop_assert_eq!(out, b);
    }

    #[test]
    fn disjoint_partition_copies_branches(seed in any::<u64>(), owner in prop::collection::vec(0usize..4, 12)) {
        let mut rng = SplitMix64::new(seed);
        let branches: Vec<_> = (0..3).map(|_| random(&mut rng, 12, 3)).collect();
        let base = random(&mut rng, 12, 3);
        let masks: Vec<Vec<f64>> = (0..3).map(|i| owner.iter().map(|&o| (o == i) as u8 as f64).collect()).collect();
        let unions: Vec<&[f64]> = masks.iter().map(|m| m.as_slice()).collect();
        let out = merge_branches(&branches, &unions, &base, MergeMode::Normalized).unwrap();
        let lit = merge_branches(&branches, &unions, &base, MergeMode::PaperLiteral).unwrap();
        for p in 0..12 {
            let want = if owner[p] < 3 { branches[owner[p]].row(p) } else { base.row(p) };
            prop_assert_eq!(out.row(p), want);
            if owner[p] < 3 {
                prop_assert_eq!(lit.row(p), want);
            } else {
                prop_assert!(lit.row(p).iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn normalized_merge_is_weighted_mean(seed in any::<u64>(), masks in prop::collection::vec(mask_strategy(6), 3)) {
        let mut rng = SplitMix64::new(seed);
        let branches: Vec<_> = (0..3).map(|_| random(&mut rng, 6, 2)).collect();
        let base = random(&mut rng, 6, 2);
        let unions: Vec<&[f64]> = masks.iter().map(|m| m.as_slice()).collect();
        let out = merge_branches(&branches, &unions, &base, MergeMode::Normalized).unwrap();
        for p in 0..6 {
            let w: f64 = masks.iter().map(|m| m[p]).sum();
            for c in 0..2 {
                let want = if w > 0.0 {
                    (0..3).map(|i| masks[i][p] * branches[i].at(p, c)).sum::<f64>() / w
                } else {
                    base.at(p, c)
                };
                prop_assert!((out.at(p, c) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zeroed_identities_make_assignment_irrelevant() {
    let s = setup(21, 4, 6);
    let mut rng = SplitMix64::new(22);
    let feats = vec![features(&mut rng, 0).zeroed(), features(&mut rng, 1).zeroed()];
    let (a, b) = halves(s.grid);
    let scene = Scene { grid: s.grid, masks: vec![a, b], skeleton: s.skeleton.clone() };
    let cfg = InjectConfig { weights: s.weights.clone(), merge_mode: MergeMode::Normalized };
    let x = hmsi_step(&cfg, &scene, &[0, 1], &feats, &s.z, &s.text).unwrap();
    let y = hmsi_step(&cfg, &scene, &[1, 0], &feats, &s.z, &s.text).unwrap();
    assert_eq!(x.latent, y.latent);
}

#[test]
fn vanishing_terms_return_latent() {
    let s = setup(23, 3, 4);
    let zero_text = s.text.map(|_| 0.0);
    let zero_skel = s.skeleton.map(|_| 0.0);
    let mut rng = SplitMix64::new(24);
    let f = features(&mut rng, 0);
    let none = SubjectMasks::new(s.grid, vec![0.0; 12], vec![0.0; 12]).unwrap();
    let inputs = BranchInputs { z_t: &s.z, c_text: &zero_text, skeleton: &zero_skel, weights: &s.weights };
    assert_eq!(build_branch(&inputs, &f, &none).unwrap(), s.z);
}

#[test]
fn text_only_branch_matches_attention_oracle() {
    let s = setup(25, 3, 4);
    let zero_skel = s.skeleton.map(|_| 0.0);
    let mut rng = SplitMix64::new(26);
    let f = features(&mut rng, 0);
    let none = SubjectMasks::new(s.grid, vec![0.0; 12], vec![0.0; 12]).unwrap();
    let inputs = BranchInputs { z_t: &s.z, c_text: &s.text, skeleton: &zero_skel, weights: &s.weights };
    let got = build_branch(&inputs, &f, &none).unwrap();
    let q = mul(&rows(&s.z), &s.weights.w_q);
    let text = oracle_attention(&q, &mul(&rows(&s.text), &s.weights.w_k), &mul(&rows(&s.text), &s.weights.w_v));
    for p in 0..12 {
        for c in 0..D {
            assert!((got.at(p, c) - (s.z.at(p, c) + text[p][c])).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_values_partition_by_half_plane() {
    let s = setup(27, 4, 6);
    let mut w = s.weights.clone();
    // Feature rows e_0 and 2·e_0 with a value map whose first row is all
    // ones make every face value 1 and every body value 2.
    w.w_v_prime = Tensor::from_fn(vec![D, D], |i| if i < D { 1.0 } else { 0.0 }).unwrap();
    let e0 = |scale: f64| Tensor::from_fn(vec![4, D], |i| if i % D == 0 { scale } else { 0.0 }).unwrap();
    let f = CharacterFeatures { f_face: e0(1.0), f_body: e0(2.0), source_char: 0 };
    let n = s.grid.cells();
    let left = |i: usize| (i % s.grid.w()) < s.grid.w() / 2;
    let m = SubjectMasks::new(
        s.grid,
        (0..n).map(|i| left(i) as u8 as f64).collect(),
        (0..n).map(|i| !left(i) as u8 as f64).collect(),
    )
    .unwrap();
    let out = fuse_face_body(&s.z, &f, &m, &w).unwrap();
    for p in 0..n {
        let want = if left(p) { 1.0 } else { 2.0 };
        assert!(out.row(p).iter().all(|&x| (x - want).abs() < 1e-12), "cell {p}");
    }
}

proptest! {
    #[test]
    fn downsampled_masks_are_disjoint_and_union_is_or(
        w in 1u32..20, h in 1u32..20, gh in 1usize..10, gw in 1usize..10, seed in any::<u64>(),
    ) {
        let mut rng = SplitMix64::new(seed);
        let owner: Vec<u64> = (0..w * h).map(|_| rng.below(3)).collect();
        let face = Raster::from_fn(w, h, |x, y| if owner[(y * w + x) as usize] == 1 { 255 } else { 0 });
        let body = Raster::from_fn(w, h, |x, y| if owner[(y * w + x) as usize] == 2 { 255 } else { 0 });
        let m = SubjectMasks::<f64>::from_rasters(LatentGrid::new(gh, gw).unwrap(), &face, &body).unwrap();
        for p in 0..gh * gw {
            prop_assert!(m.face()[p] * m.body()[p] == 0.0);
            prop_assert_eq!(m.union()[p], m.face()[p].max(m.body()[p]));
        }
    }
}
