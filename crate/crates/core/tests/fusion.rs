use lsm_core::fusion::*;
use lsm_core::synthetic::rng;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn tokens(role: TokenRole, m: DMatrix<f64>) -> TokenMatrix {
    TokenMatrix::new(role, m).unwrap()
}

fn permute_rows(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], j)])
}

#[test]
fn zero_parameters_are_identity() {
    let mut r = rng(0);
    for heads in [1, 2, 4] {
        let params = AttentionBlockParams::zeros(8, heads).unwrap();
        let p = tokens(TokenRole::Point, random_matrix(&mut r, 5, 8));
        let f = tokens(TokenRole::Image, random_matrix(&mut r, 3, 8));
        let out = cross_modal_fuse(&p, &f, &params).unwrap();
        assert_eq!(out, p);
    }
}

#[test]
fn gradcheck_seed_zero() {
    let mut r = rng(0);
    let params = AttentionBlockParams::random(&mut r, 8, 1, 0.5).unwrap();
    let p = tokens(TokenRole::Point, random_matrix(&mut r, 4, 8));
    let f = tokens(TokenRole::Semantic, random_matrix(&mut r, 4, 8));
    let w = random_matrix(&mut r, 4, 8);
    let rep = attention_gradcheck(&params, &p, &f, &w).unwrap();
    assert!(rep.passed(), "{:?}", &rep.failures[..rep.failures.len().min(5)]);
    assert!(rep.max_error < 1e-4);
    assert_eq!(
        rep.checked,
        params.tensors().iter().map(|t| t.len()).sum::<usize>() + 64
    );
}

#[test]
fn gradcheck_multi_head_and_zero_block() {
    let mut r = rng(1);
    let params = AttentionBlockParams::random(&mut r, 8, 2, 0.5).unwrap();
    let p = tokens(TokenRole::Point, random_matrix(&mut r, 3, 8));
    let f = tokens(TokenRole::Image, random_matrix(&mut r, 5, 8));
    let w = random_matrix(&mut r, 3, 8);
    assert!(attention_gradcheck(&params, &p, &f, &w).unwrap().passed());

    let zero = AttentionBlockParams::zeros(8, 1).unwrap();
    let ones = DMatrix::from_element(3, 8, 1.0);
    assert!(attention_gradcheck(&zero, &p, &f, &ones).unwrap().passed());
}

#[test]
fn backward_of_zero_block_passes_upstream_to_points() {
    let mut r = rng(2);
    let params = AttentionBlockParams::zeros(4, 1).unwrap();
    let p = tokens(TokenRole::Point, random_matrix(&mut r, 3, 4));
    let f = tokens(TokenRole::Image, random_matrix(&mut r, 2, 4));
    let up = random_matrix(&mut r, 3, 4);
    let g = cross_modal_fuse_backward(&p, &f, &params, &up).unwrap();
    assert_eq!(g.points, up);
    assert_eq!(g.context, DMatrix::zeros(2, 4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let a = softmax_rows(&DMatrix::from_row_slice(3, 4, &vals));
        for row in a.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn permutation_properties(seed in 0u64..10_000, heads in prop_oneof![Just(1usize), Just(2), Just(4)]) {
        let mut r = rng(seed);
        let params = AttentionBlockParams::random(&mut r, 8, heads, 0.5).unwrap();
        let p = random_matrix(&mut r, 5, 8);
        let f = random_matrix(&mut r, 6, 8);
        let base = cross_modal_fuse(&tokens(TokenRole::Point, p.clone()), &tokens(TokenRole::Image, f.clone()), &params).unwrap();

        let mut perm_f: Vec<usize> = (0..6).collect();
        perm_f.shuffle(&mut r);
        let out_f = cross_modal_fuse(
            &tokens(TokenRole::Point, p.clone()),
            &tokens(TokenRole::Image, permute_rows(&f, &perm_f)),
            &params,
        ).unwrap();
        prop_assert!((out_f.tokens() - base.tokens()).amax() < 1e-12);

        let mut perm_p: Vec<usize> = (0..5).collect();
        perm_p.shuffle(&mut r);
        let out_p = cross_modal_fuse(
            &tokens(TokenRole::Point, permute_rows(&p, &perm_p)),
            &tokens(TokenRole::Image, f.clone()),
            &params,
        ).unwrap();
        prop_assert!((out_p.tokens() - permute_rows(base.tokens(), &perm_p)).amax() < 1e-12);
    }
}
